"""Remote chat-completion backend for locating and intention reasoning.

Speaks a generic JSON chat wire shape: POST {model, messages, n} where a
message's content is either a string or a list of {type: "text"|"image_url"}
parts with images as data URIs. Endpoint, model name and API key come from
environment variables. Responses are parsed with the shared triplet parser;
per-candidate confidence metadata is used when the transport provides it,
otherwise confidences fall back to a uniform value and results are flagged.
"""

from __future__ import annotations

import base64
import io
import os
from importlib import resources

import httpx
import numpy as np
from PIL import Image

ENDPOINT_ENV = "REASONER_ENDPOINT"
MODEL_ENV = "REASONER_MODEL"
API_KEY_ENV = "REASONER_API_KEY"

UNIFORM_CONFIDENCE = 0.5


class RemoteReasonerError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, retryable: bool = False, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.retryable = retryable
        self.attempts = attempts


def _load_prompt(name: str) -> str:
    return resources.files("dragkit.reasoner").joinpath(f"prompts/{name}").read_text()


def image_data_uri(img: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


class RemoteBackend:
    name = "remote"

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        timeout: float = 30.0,
        max_retries: int = 2,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        self.model = model or os.environ.get(MODEL_ENV, "")
        self.api_key = api_key or os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self.max_retries = max_retries
        self._transport = transport
        if not self.endpoint:
            raise ValueError(f"remote backend needs an endpoint ({ENDPOINT_ENV})")

    def _post(self, payload: dict) -> dict:
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for attempt in range(1, self.max_retries + 2):
            try:
                with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
                    resp = client.post(self.endpoint, json=payload, headers=headers)
                if resp.status_code >= 500:
                    last_exc = RemoteReasonerError(
                        f"server error {resp.status_code}", status=resp.status_code,
                        retryable=True, attempts=attempt,
                    )
                    continue
                if resp.status_code >= 400:
                    raise RemoteReasonerError(
                        f"request rejected: {resp.status_code} {resp.text[:200]}",
                        status=resp.status_code, retryable=False, attempts=attempt,
                    )
                return resp.json()
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                last_exc = RemoteReasonerError(
                    f"transport failure: {exc}", retryable=True, attempts=attempt
                )
        assert last_exc is not None
        raise last_exc

    def _choices(self, response: dict) -> list[dict]:
        choices = response.get("choices")
        if not isinstance(choices, list) or not choices:
            raise RemoteReasonerError("response carries no choices")
        return choices

    @staticmethod
    def _choice_text(choice: dict) -> str:
        message = choice.get("message", {})
        content = message.get("content", "")
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content)
        return content or ""

    @staticmethod
    def _choice_confidence(choice: dict) -> float | None:
        if isinstance(choice.get("confidence"), (int, float)):
            return float(choice["confidence"])
        logprobs = choice.get("logprobs")
        if isinstance(logprobs, dict) and isinstance(logprobs.get("mean"), (int, float)):
            return float(np.exp(logprobs["mean"]))
        return None

    def locate(self, query):
        from . import ObjectDescription

        prompt = _load_prompt("locate_prompt.txt").format(
            points=[[round(p[0][0]), round(p[0][1])] for p in query.points]
        )
        content: list[dict] = [{"type": "text", "text": prompt}]
        if query.image is not None:
            content.append({"type": "image_url", "image_url": {"url": image_data_uri(query.image)}})
        response = self._post(
            {"model": self.model, "messages": [{"role": "user", "content": content}]}
        )
        text = self._choice_text(self._choices(response)[0]).strip().rstrip(".")
        if not text:
            raise RemoteReasonerError("locator returned empty description")
        return ObjectDescription(text=text)

    def reason(self, description, caption: str, points, n_candidates: int, scene=None):
        from . import UNIFORM_FALLBACK_FLAG, parse_reasoner_output

        direction = [
            [[round(h[0]), round(h[1])], [round(t[0]), round(t[1])]] for h, t in points
        ]
        prompt = (
            _load_prompt("intention_prompt.txt")
            + "\nINPUT:\n"
            + f"Original description: {caption}.\n"
            + f"Drag information 1: The start point is {description.text}. "
            + f"Direction is {direction[0]}.\n"
            + "OUTPUT:\n"
        )
        response = self._post(
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "n": n_candidates,
            }
        )
        intentions = []
        parse_errors: list[str] = []
        for choice in self._choices(response):
            parsed, errors = parse_reasoner_output(self._choice_text(choice))
            parse_errors.extend(errors)
            conf = self._choice_confidence(choice)
            for it in parsed:
                if conf is None:
                    it.confidence = UNIFORM_CONFIDENCE
                    it.flags.append(UNIFORM_FALLBACK_FLAG)
                else:
                    it.confidence = min(max(conf, 1e-6), 1.0)
                intentions.append(it)
        if not intentions:
            raise RemoteReasonerError(
                "no parseable intentions in remote output: " + "; ".join(parse_errors[:3])
            )
        return intentions[:n_candidates]
