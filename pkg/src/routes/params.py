from typing import Literal, Optional

from fastapi import APIRouter, HTTPException, Query, status
from pydantic import ValidationError

from src.schemas import DerivedParamsResponse, OddmParams

router = APIRouter(prefix="/params", tags=["params"])


@router.get("/derived", response_model=DerivedParamsResponse)
def read_derived_params(
    preset: Literal["desk", "full"] = Query("full"),
    M: Optional[int] = Query(None, ge=1),
    N: Optional[int] = Query(None, ge=2),
    T: Optional[float] = Query(None, gt=0),
    Q: Optional[int] = Query(None, ge=1),
    beta: Optional[float] = Query(None, ge=0.0, le=1.0),
    Ns: Optional[int] = Query(None, ge=4),
    Lcp: Optional[int] = Query(None, ge=0),
):
    """
    Derived quantities of a frame: resolutions, sample rate, sub-pulse duration and CP.

    :param preset: Base preset the remaining parameters override.
    :type preset: str
    :return: The parameters and their derived quantities.
    :rtype: DerivedParamsResponse
    """
    overrides = {
        name: value
        for name, value in {"M": M, "N": N, "T": T, "Q": Q, "beta": beta, "Ns": Ns, "Lcp": Lcp}.items()
        if value is not None
    }
    try:
        params = OddmParams.preset(preset, **overrides)
    except ValidationError as exc:
        detail = [f"{'.'.join(map(str, e['loc'])) or 'params'}: {e['msg']}" for e in exc.errors()]
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=detail)
    return DerivedParamsResponse(params=params, **params.derived())
