"""Evaluation metrics for rectified document images.

Image metrics operate on the pair (ground truth, rectified) after both
are area-normalized to 598,400 pixels and converted to grayscale; the
displacement field comes from dense SIFT-flow matching ground truth to
rectified. Text metrics operate on normalized Unicode strings with the
reference text defining the character count.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import imaging, sift, siftflow
from .errors import ParameterError, ShapeError

TARGET_AREA = 598400

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_DYNAMIC_RANGE = 1.0


# ---------------------------------------------------------------------------
# distortion metrics
# ---------------------------------------------------------------------------


def local_distortion(field: siftflow.DisplacementField) -> float:
    """Mean Euclidean displacement over all matched pixels."""
    if field.dx.size == 0:
        raise ParameterError("displacement field is empty")
    return float(np.hypot(field.dx.astype(np.float64), field.dy.astype(np.float64)).mean())


def line_distortion(field: siftflow.DisplacementField) -> float:
    """Mean of per-column stds of dx and per-row stds of dy (population).

    Constant fields score 0, as does any field whose dx depends only on
    the column index and dy only on the row index.
    """
    if field.dx.size == 0:
        raise ParameterError("displacement field is empty")
    col_stds = np.std(field.dx.astype(np.float64), axis=0)
    row_stds = np.std(field.dy.astype(np.float64), axis=1)
    return float(np.concatenate([col_stds, row_stds]).mean())


# ---------------------------------------------------------------------------
# MS-SSIM
# ---------------------------------------------------------------------------


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    win = np.exp(-(xs**2) / (2.0 * sigma**2))
    return win / win.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation
    k = win.shape[0]
    h, w = img.shape
    tmp = np.zeros((h, w - k + 1), np.float64)
    for t in range(k):
        tmp += win[t] * img[:, t : t + w - k + 1]
    out = np.zeros((h - k + 1, w - k + 1), np.float64)
    for t in range(k):
        out += win[t] * tmp[t : t + h - k + 1]
    return out


def _ssim_terms(a: np.ndarray, b: np.ndarray, win: np.ndarray) -> tuple[float, float]:
    c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE) ** 2
    mu1 = _filter_valid(a, win)
    mu2 = _filter_valid(b, win)
    s1 = _filter_valid(a * a, win) - mu1 * mu1
    s2 = _filter_valid(b * b, win) - mu2 * mu2
    s12 = _filter_valid(a * b, win) - mu1 * mu2
    lum = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    cs = (2.0 * s12 + c2) / (s1 + s2 + c2)
    return float(lum.mean()), float(cs.mean())


def ms_ssim(a: np.ndarray, b: np.ndarray, weights=MS_SSIM_WEIGHTS) -> float:
    """Multi-scale SSIM over a pyramid with one level per weight.

    Contrast-structure factors contribute at every level, the luminance
    factor only at the coarsest; the factors combine as a weighted
    product and the result is clamped to [0, 1]. The paper's five weights
    sum to 1.0001 and are used as given.
    """
    a = np.asarray(imaging.luma(a), dtype=np.float64)
    b = np.asarray(imaging.luma(b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"images {a.shape} and {b.shape} differ")
    levels = len(weights)
    min_dim = min(a.shape)
    if min_dim < SSIM_WINDOW * 2 ** (levels - 1):
        raise ParameterError(
            f"min dimension {min_dim} too small for a {levels}-level pyramid "
            f"with an {SSIM_WINDOW}-tap window"
        )
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    result = 1.0
    for level in range(levels):
        lum, cs = _ssim_terms(a, b, win)
        result *= max(cs, 0.0) ** weights[level]
        if level == levels - 1:
            result *= max(lum, 0.0) ** weights[level]
        else:
            a = imaging.gaussian_downsample(a).astype(np.float64)
            b = imaging.gaussian_downsample(b).astype(np.float64)
    return float(min(max(result, 0.0), 1.0))


# ---------------------------------------------------------------------------
# text metrics
# ---------------------------------------------------------------------------


def normalize_text(text: str) -> str:
    """NFC normalization, whitespace runs collapsed to single spaces."""
    return " ".join(unicodedata.normalize("NFC", text).split())


@njit(cache=True)
def _levenshtein_table(hyp, ref):  # pragma: no cover - compiled
    n = hyp.shape[0]
    m = ref.shape[0]
    dp = np.empty((n + 1, m + 1), np.int32)
    for i in range(n + 1):
        dp[i, 0] = i
    for j in range(m + 1):
        dp[0, j] = j
    for i in range(1, n + 1):
        hc = hyp[i - 1]
        for j in range(1, m + 1):
            cost = 0 if hc == ref[j - 1] else 1
            best = dp[i - 1, j - 1] + cost
            dele = dp[i - 1, j] + 1
            if dele < best:
                best = dele
            ins = dp[i, j - 1] + 1
            if ins < best:
                best = ins
            dp[i, j] = best
    return dp


def edit_distance(hyp: str, ref: str) -> tuple[int, int, int, int]:
    """Levenshtein distance as (deletions, insertions, substitutions, total).

    Operations transform ``hyp`` into ``ref``; the split follows one
    optimal alignment with a fixed match > substitution > deletion >
    insertion preference, so results are deterministic.
    """
    hyp_codes = np.array([ord(c) for c in hyp], np.int32)
    ref_codes = np.array([ord(c) for c in ref], np.int32)
    dp = _levenshtein_table(hyp_codes, ref_codes)
    i, j = len(hyp), len(ref)
    dels = ins = subs = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and hyp[i - 1] == ref[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            subs += 1
            i -= 1
            j -= 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    total = dels + ins + subs
    assert total == int(dp[len(hyp), len(ref)])
    return dels, ins, subs, total


def cer(hyp: str, ref: str) -> float:
    """Character error rate (d + i + s) / N over the reference length."""
    if not ref:
        raise ParameterError("reference text is empty; CER is undefined")
    _, _, _, total = edit_distance(hyp, ref)
    return total / len(ref)


# ---------------------------------------------------------------------------
# pair evaluation and reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    target_area: int = TARGET_AREA
    cell_size: int = 3
    match: siftflow.MatchConfig = siftflow.MatchConfig()

    def as_dict(self):
        return {
            "target_area": self.target_area,
            "sift_cell_size": self.cell_size,
            "match": self.match.as_dict(),
            "ms_ssim_weights": list(MS_SSIM_WEIGHTS),
            "ssim": {
                "k1": SSIM_K1,
                "k2": SSIM_K2,
                "window": SSIM_WINDOW,
                "sigma": SSIM_SIGMA,
                "dynamic_range": SSIM_DYNAMIC_RANGE,
            },
            "text_normalization": "NFC; whitespace runs collapsed; stripped",
        }


@dataclass
class PairMetrics:
    id: str
    ms_ssim: float | None = None
    ld: float | None = None
    li_d: float | None = None
    ed: int | None = None
    cer: float | None = None
    error: str | None = None


def evaluate_pair(
    gt_img: np.ndarray,
    rect_img: np.ndarray,
    gt_text: str | None = None,
    hyp_text: str | None = None,
    config: EvalConfig | None = None,
    pair_id: str = "",
) -> PairMetrics:
    """Score one rectified image (and optionally its OCR text) against GT.

    Both images are area-normalized; the rectified image is brought to the
    ground truth's normalized shape so the matcher sees equal grids.
    Matching runs from ground truth to rectified.
    """
    config = config or EvalConfig()
    gt_n = imaging.resize_to_area(gt_img, config.target_area)
    h, w = gt_n.shape[:2]
    rect_n = imaging.resize_bilinear(rect_img, h, w)
    gt_gray = imaging.luma(gt_n)
    rect_gray = imaging.luma(rect_n)

    ms = ms_ssim(gt_gray, rect_gray)
    da = sift.dense_sift(gt_gray, config.cell_size)
    db = sift.dense_sift(rect_gray, config.cell_size)
    field = siftflow.sift_flow_match(da, db, config.match)
    row = PairMetrics(
        id=pair_id,
        ms_ssim=ms,
        ld=local_distortion(field),
        li_d=line_distortion(field),
    )
    if gt_text is not None and hyp_text is not None:
        ref = normalize_text(gt_text)
        hyp = normalize_text(hyp_text)
        _, _, _, total = edit_distance(hyp, ref)
        row.ed = total
        row.cer = cer(hyp, ref)
    return row


@dataclass
class MetricReport:
    rows: list[PairMetrics]
    aggregates: dict
    config: dict

    @classmethod
    def build(cls, rows: list[PairMetrics], config: EvalConfig | None = None):
        config = config or EvalConfig()
        rows = sorted(rows, key=lambda r: r.id)
        agg = {}
        for key in ("ms_ssim", "ld", "li_d", "ed", "cer"):
            vals = [getattr(r, key) for r in rows if getattr(r, key) is not None]
            agg[key] = float(np.mean(vals)) if vals else None
        agg["pairs"] = len(rows)
        agg["failed"] = sum(1 for r in rows if r.error is not None)
        return cls(rows=rows, aggregates=agg, config=config.as_dict())

    def to_json(self) -> str:
        payload = {
            "per_image": [vars(r) for r in self.rows],
            "aggregate": self.aggregates,
            "config": self.config,
        }
        return json.dumps(payload, indent=2)

    def to_csv(self) -> str:
        header = "id,ms_ssim,ld,li_d,ed,cer,error"
        lines = [header]

        def fmt(v):
            return "" if v is None else str(v)

        for r in self.rows:
            lines.append(
                ",".join(
                    [r.id, fmt(r.ms_ssim), fmt(r.ld), fmt(r.li_d), fmt(r.ed), fmt(r.cer),
                     (r.error or "").replace(",", ";")]
                )
            )
        agg = self.aggregates
        lines.append(
            ",".join(
                [
                    "aggregate",
                    fmt(agg.get("ms_ssim")),
                    fmt(agg.get("ld")),
                    fmt(agg.get("li_d")),
                    fmt(agg.get("ed")),
                    fmt(agg.get("cer")),
                    "",
                ]
            )
        )
        return "\n".join(lines) + "\n"

    def summary_line(self) -> str:
        agg = self.aggregates

        def fmt(v):
            return "n/a" if v is None else f"{v:.4f}"

        return (
            f"MS-SSIM {fmt(agg.get('ms_ssim'))} LD {fmt(agg.get('ld'))} "
            f"Li-D {fmt(agg.get('li_d'))} ED {fmt(agg.get('ed'))} CER {fmt(agg.get('cer'))}"
        )
