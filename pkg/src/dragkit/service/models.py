"""Pydantic wire schemas for the edit service."""

from __future__ import annotations

import base64
import binascii
import io
from typing import Literal, Optional

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, model_validator


class PointPair(BaseModel):
    handle: tuple[float, float]
    target: tuple[float, float]


class IntentionModel(BaseModel):
    intent: str = Field(min_length=1)
    source_prompt: str = Field(min_length=1)
    target_prompt: str = Field(min_length=1)
    confidence: float = Field(gt=0.0, le=1.0, default=1.0)
    flags: list[str] = Field(default_factory=list)


class IntentionsRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG")
    points: list[PointPair] = Field(min_length=1)
    caption: str = Field(min_length=1)
    n: int = Field(ge=1, default=3)
    backend: Literal["oracle", "remote"] = "oracle"


class IntentionsResponse(BaseModel):
    intentions: list[IntentionModel]
    truncated: bool = False


class WeightsModel(BaseModel):
    w_e: Optional[float] = Field(default=None, ge=0)
    w_c: Optional[float] = Field(default=None, ge=0)
    eta_quality: Optional[float] = Field(default=None, ge=0)
    alpha: Optional[float] = Field(default=None, gt=0)
    beta: Optional[float] = Field(default=None, ge=0)
    eta: Optional[float] = None
    n1: Optional[int] = Field(default=None, ge=0)
    n2: Optional[int] = Field(default=None, ge=0)


class TogglesModel(BaseModel):
    use_edit: bool = True
    use_semantic: bool = True
    use_quality: bool = True
    use_kv_replacement: bool = True


class AutoIntention(BaseModel):
    n: int = Field(ge=1, default=1)
    backend: Literal["oracle", "remote"] = "oracle"


class EditSubmission(BaseModel):
    image: str = Field(description="base64 PNG")
    mask: str = Field(description="base64 PNG, nonzero = editable")
    caption: str = Field(min_length=1)
    points: list[PointPair] = Field(min_length=1)
    intention: Optional[IntentionModel] = None
    auto: Optional[AutoIntention] = None
    seed: int = 0
    weights: Optional[WeightsModel] = None
    toggles: TogglesModel = Field(default_factory=TogglesModel)
    idempotency_key: Optional[str] = None

    @model_validator(mode="after")
    def _one_intention_source(self):
        if self.auto is None and self.intention is None:
            raise ValueError("provide either an inline intention or auto")
        if self.auto is not None and self.intention is not None:
            raise ValueError("intention and auto are mutually exclusive")
        return self


class JobView(BaseModel):
    id: str
    state: Literal["queued", "running", "done", "failed"]
    created_at: float
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    error: Optional[str] = None
    n_results: int = 0
    caption: Optional[str] = None
    seed: Optional[int] = None


class SubmitResponse(BaseModel):
    job_id: str


class ResultView(BaseModel):
    index: int
    image: str  # base64 PNG
    intention: IntentionModel
    trace: list[dict]
    config: dict
    flags: list[str]


def decode_image_b64(data: str, field: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except (binascii.Error, OSError, ValueError) as exc:
        raise ValueError(f"{field}: not a decodable base64 PNG ({exc})")
    return np.asarray(img)


def decode_mask_b64(data: str, field: str) -> np.ndarray:
    """Binary mask from the wire: packed-bits form "bits:<w>:<h>:<b64>" or base64 PNG.

    The packed form is the canonical UI encoding: row-major pixels packed
    MSB-first into bytes, one bit per pixel.
    """
    if data.startswith("bits:"):
        try:
            _, w_s, h_s, payload = data.split(":", 3)
            w, h = int(w_s), int(h_s)
            raw = base64.b64decode(payload, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise ValueError(f"{field}: malformed packed-bits mask ({exc})")
        if w <= 0 or h <= 0:
            raise ValueError(f"{field}: non-positive mask dimensions")
        expected = (w * h + 7) // 8
        if len(raw) != expected:
            raise ValueError(f"{field}: expected {expected} mask bytes, got {len(raw)}")
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: w * h]
        return bits.reshape(h, w).astype(bool)
    try:
        raw = base64.b64decode(data, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("L")
    except (binascii.Error, OSError, ValueError) as exc:
        raise ValueError(f"{field}: not a decodable base64 PNG ({exc})")
    return np.asarray(img) > 0


def encode_mask_bits(mask: np.ndarray) -> str:
    h, w = mask.shape
    packed = np.packbits(mask.astype(np.uint8).flatten())
    return f"bits:{w}:{h}:" + base64.b64encode(packed.tobytes()).decode("ascii")


def encode_image_b64(img: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
