"""Owlness metric, gaze-strategy partitioning, and the evaluation protocol.

The owlness of a frame is d_h / (d_h + d_p), where d_h and d_p are the
Euclidean distances of the normalized nose tip and normalized pupil from
their per-subject mean positions (the background model). Both distances live
in [0, sqrt(2)] because the normalizations map into the unit square; owlness
is therefore in [0, 1], with 1 meaning gaze shifts ride entirely on head
motion ("owl") and 0 entirely on eye motion ("lizard").

The evaluation protocol holds one subject out, trains on the rest with the
training pool subsample-balanced per class, supersample-balances the held-out
frames, classifies with confidence pruning, and repeats; accuracy is scored
over accepted decisions only. Head-only and head-and-eye modes run on
identical frame draws so their accuracies are directly comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .core import (
    N_REGIONS,
    NOSE_TIP_INDEX,
    REGIONS,
    FrameRecord,
    GazekitError,
    region_index,
)
from .features import (
    DegenerateBox,
    DegenerateEye,
    FeatureMode,
    normalize_landmarks,
    normalize_pupil,
    nose_tip_normalized,
)
from .forest import (
    ForestConfig,
    predict_proba_batch,
    reseeded,
    subsample_indices,
    supersample_indices,
    train_arrays,
)
from .pipeline import AttritionLedger
from .pupil import DEFAULT_GRID, ParamGrid, PupilResult, PupilStatus, detect_pupil

__all__ = [
    "MissingBackground",
    "NoQualifyingFrames",
    "InsufficientData",
    "ModeMismatch",
    "Strategy",
    "SubjectBackground",
    "BackgroundModel",
    "OwlnessReport",
    "ConfusionMatrix",
    "owlness_frame",
    "owlness_subject",
    "classify_strategy",
    "build_background",
    "PreparedSubject",
    "PreparedDataset",
    "prepare_dataset",
    "mode_matrix",
    "decide_batch",
    "background_from_prepared",
    "owlness_from_prepared",
    "EvalConfig",
    "ModeStats",
    "UserEvaluation",
    "StudyResult",
    "evaluate_user",
    "run_study",
    "DeltaReport",
    "accuracy_delta_report",
    "pearson",
]

DEFAULT_OWL_THRESHOLDS = (0.45, 0.55)


class MissingBackground(GazekitError):
    """No background model exists for the requested subject."""


class NoQualifyingFrames(GazekitError):
    """A subject has no frames that passed pupil detection."""


class InsufficientData(GazekitError):
    """A subject lacks the required pupil-passing frames for some region."""


class ModeMismatch(GazekitError):
    """A comparison requires both feature modes on identical frame sets."""


class Strategy(Enum):
    LIZARD = "lizard"
    MIXED = "mixed"
    OWL = "owl"


@dataclass(frozen=True)
class SubjectBackground:
    """Per-subject mean normalized nose-tip and pupil positions."""

    mean_nose: tuple[float, float]
    mean_pupil: tuple[float, float]
    frame_count: int

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("background model needs at least one frame")


@dataclass(frozen=True)
class BackgroundModel:
    subjects: dict[str, SubjectBackground]

    def for_subject(self, subject_id: str) -> SubjectBackground:
        try:
            return self.subjects[subject_id]
        except KeyError:
            raise MissingBackground(f"no background model for subject {subject_id!r}") from None


@dataclass(frozen=True)
class OwlnessReport:
    subject_id: str
    owlness: float        # mean per-frame owlness, in [0, 1]
    mean_head_dist: float
    mean_pupil_dist: float
    strategy: Strategy
    frame_count: int


def _owlness_from_points(nose, pupil, background: SubjectBackground):
    d_head = float(np.linalg.norm(np.asarray(nose) - background.mean_nose))
    d_pupil = float(np.linalg.norm(np.asarray(pupil) - background.mean_pupil))
    total = d_head + d_pupil
    # A motionless frame carries no strategy information; call it neutral.
    owlness = 0.5 if total == 0.0 else d_head / total
    return owlness, d_head, d_pupil


def owlness_frame(record: FrameRecord, pupil: PupilResult, bg: BackgroundModel) -> float:
    """Owlness of one frame against its subject's background model."""
    if pupil.status is not PupilStatus.DETECTED:
        raise NoQualifyingFrames("owlness needs a detected pupil")
    background = bg.for_subject(record.subject_id)
    nose = nose_tip_normalized(normalize_landmarks(record.landmarks))
    pupil_uv = normalize_pupil(pupil.center, record.eye_polygon)
    owlness, _, _ = _owlness_from_points(nose, pupil_uv, background)
    return owlness


def classify_strategy(owlness: float, thresholds=DEFAULT_OWL_THRESHOLDS) -> Strategy:
    low, high = thresholds
    if not low <= high:
        raise ValueError("owl thresholds must satisfy low <= high")
    if owlness < low:
        return Strategy.LIZARD
    if owlness > high:
        return Strategy.OWL
    return Strategy.MIXED


def owlness_subject(
    frames: Sequence[FrameRecord],
    pupils: Sequence[PupilResult],
    bg: BackgroundModel,
    thresholds=DEFAULT_OWL_THRESHOLDS,
) -> OwlnessReport:
    """Average per-frame owlness over a subject's pupil-passing frames."""
    values = []
    head = []
    pupil_d = []
    subject_id = None
    for record, pupil in zip(frames, pupils):
        if pupil.status is not PupilStatus.DETECTED:
            continue
        subject_id = record.subject_id
        background = bg.for_subject(record.subject_id)
        nose = nose_tip_normalized(normalize_landmarks(record.landmarks))
        pupil_uv = normalize_pupil(pupil.center, record.eye_polygon)
        m, dh, dp = _owlness_from_points(nose, pupil_uv, background)
        values.append(m)
        head.append(dh)
        pupil_d.append(dp)
    if not values:
        raise NoQualifyingFrames("no frames with a detected pupil")
    owlness = float(np.mean(values))
    return OwlnessReport(
        subject_id=subject_id,
        owlness=owlness,
        mean_head_dist=float(np.mean(head)),
        mean_pupil_dist=float(np.mean(pupil_d)),
        strategy=classify_strategy(owlness, thresholds),
        frame_count=len(values),
    )


def build_background(
    frames: Sequence[FrameRecord], pupils: Sequence[PupilResult]
) -> BackgroundModel:
    """Per-subject means over exactly the frames that passed pupil detection."""
    noses: dict[str, list] = {}
    pupil_pts: dict[str, list] = {}
    for record, pupil in zip(frames, pupils):
        if pupil.status is not PupilStatus.DETECTED:
            continue
        nose = nose_tip_normalized(normalize_landmarks(record.landmarks))
        uv = normalize_pupil(pupil.center, record.eye_polygon)
        noses.setdefault(record.subject_id, []).append(nose)
        pupil_pts.setdefault(record.subject_id, []).append(uv)
    subjects = {
        sid: SubjectBackground(
            mean_nose=tuple(np.mean(noses[sid], axis=0)),
            mean_pupil=tuple(np.mean(pupil_pts[sid], axis=0)),
            frame_count=len(noses[sid]),
        )
        for sid in noses
    }
    return BackgroundModel(subjects=subjects)


class ConfusionMatrix:
    """6x6 counts, rows = ground truth, columns = prediction."""

    def __init__(self, counts=None):
        self.counts = (
            np.zeros((N_REGIONS, N_REGIONS), dtype=np.int64)
            if counts is None
            else np.array(counts, dtype=np.int64)
        )
        if self.counts.shape != (N_REGIONS, N_REGIONS):
            raise ValueError("confusion matrix must be 6x6")

    def add(self, truth_codes, predicted_codes):
        np.add.at(self.counts, (np.asarray(truth_codes), np.asarray(predicted_codes)), 1)

    def merge(self, other: "ConfusionMatrix"):
        self.counts += other.counts

    def total(self) -> int:
        return int(self.counts.sum())

    def overall_accuracy(self) -> float:
        total = self.total()
        return math.nan if total == 0 else float(np.trace(self.counts)) / total

    def row_percentages(self) -> np.ndarray:
        """Rows normalized to percent; all-zero rows become NaN."""
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(sums > 0, 100.0 * self.counts / sums, np.nan)

    def per_region_accuracy(self) -> np.ndarray:
        return np.diagonal(self.row_percentages()) / 100.0


# ---------------------------------------------------------------------------
# Prepared datasets: pupil detection and feature extraction run once
# ---------------------------------------------------------------------------

@dataclass
class PreparedSubject:
    subject_id: str
    labels: np.ndarray      # (n,) region codes for frames with a parsed face
    head: np.ndarray        # (n, 136)
    pupil_uv: np.ndarray    # (n, 2); NaN where the pupil stage failed
    pupil_ok: np.ndarray    # (n,) bool
    n_records: int          # including face-detection failures

    @property
    def n_faces(self) -> int:
        return int(self.labels.size)

    @property
    def n_pupils(self) -> int:
        return int(self.pupil_ok.sum())

    def region_counts(self) -> np.ndarray:
        return np.bincount(self.labels[self.pupil_ok], minlength=N_REGIONS)


@dataclass
class PreparedDataset:
    subjects: dict[str, PreparedSubject]
    total_records: int

    @property
    def faces(self) -> int:
        return sum(s.n_faces for s in self.subjects.values())

    @property
    def pupils(self) -> int:
        return sum(s.n_pupils for s in self.subjects.values())

    def subject_ids(self) -> list[str]:
        return list(self.subjects)


def prepare_dataset(
    entries: Iterable, grid: ParamGrid = DEFAULT_GRID
) -> PreparedDataset:
    """Run pupil detection and feature extraction over a frame stream.

    Accepts anything yielding objects with a ``record`` attribute
    (:class:`~gazekit.dataio.ParsedLine`, :class:`~gazekit.synth.GeneratedFrame`)
    or bare FrameRecords / None. Frames with unusable landmark geometry are
    treated as failing the pupil stage.
    """
    acc: dict[str, dict[str, list]] = {}
    extra_records: dict[str, int] = {}
    total = 0
    for entry in entries:
        record = getattr(entry, "record", entry)
        total += 1
        if record is None:
            sid = getattr(entry, "subject_id", None)
            if sid is not None:
                extra_records[sid] = extra_records.get(sid, 0) + 1
            continue
        slot = acc.setdefault(
            record.subject_id, {"labels": [], "head": [], "uv": [], "ok": []}
        )
        pupil = detect_pupil(record.eye_crop, record.eye_polygon, grid)
        try:
            head = normalize_landmarks(record.landmarks)
        except DegenerateBox:
            continue  # unusable alignment; drops out before the pupil stage
        ok = pupil.status is PupilStatus.DETECTED
        if ok:
            try:
                uv = normalize_pupil(pupil.center, record.eye_polygon)
            except DegenerateEye:
                ok, uv = False, (math.nan, math.nan)
        else:
            uv = (math.nan, math.nan)
        slot["labels"].append(region_index(record.label))
        slot["head"].append(head)
        slot["uv"].append(uv)
        slot["ok"].append(ok)

    subjects = {}
    for sid, slot in acc.items():
        subjects[sid] = PreparedSubject(
            subject_id=sid,
            labels=np.array(slot["labels"], dtype=np.int64),
            head=np.array(slot["head"], dtype=np.float64),
            pupil_uv=np.array(slot["uv"], dtype=np.float64),
            pupil_ok=np.array(slot["ok"], dtype=bool),
            n_records=len(slot["labels"]) + extra_records.get(sid, 0),
        )
    # Face failures for subjects that never produced a valid frame still
    # count toward the dataset total.
    for sid, count in extra_records.items():
        if sid not in subjects:
            subjects[sid] = PreparedSubject(
                subject_id=sid,
                labels=np.zeros(0, dtype=np.int64),
                head=np.zeros((0, 136)),
                pupil_uv=np.zeros((0, 2)),
                pupil_ok=np.zeros(0, dtype=bool),
                n_records=count,
            )
    return PreparedDataset(subjects=subjects, total_records=total)


def background_from_prepared(ds: PreparedDataset) -> BackgroundModel:
    subjects = {}
    for sid, subject in ds.subjects.items():
        ok = subject.pupil_ok
        if not ok.any():
            continue
        noses = nose_block(subject.head[ok])
        subjects[sid] = SubjectBackground(
            mean_nose=tuple(noses.mean(axis=0)),
            mean_pupil=tuple(subject.pupil_uv[ok].mean(axis=0)),
            frame_count=int(ok.sum()),
        )
    return BackgroundModel(subjects=subjects)


def nose_block(head: np.ndarray) -> np.ndarray:
    """Normalized nose-tip columns of a stacked head-feature matrix."""
    return head[:, 2 * NOSE_TIP_INDEX : 2 * NOSE_TIP_INDEX + 2]


def owlness_from_prepared(
    ds: PreparedDataset,
    bg: BackgroundModel | None = None,
    thresholds=DEFAULT_OWL_THRESHOLDS,
) -> dict[str, OwlnessReport]:
    """Owlness report per subject, averaged over pupil-passing frames."""
    bg = bg or background_from_prepared(ds)
    reports = {}
    for sid, subject in ds.subjects.items():
        ok = subject.pupil_ok
        if not ok.any():
            continue
        background = bg.for_subject(sid)
        noses = nose_block(subject.head[ok])
        d_head = np.linalg.norm(noses - background.mean_nose, axis=1)
        d_pupil = np.linalg.norm(subject.pupil_uv[ok] - background.mean_pupil, axis=1)
        total = d_head + d_pupil
        with np.errstate(invalid="ignore"):
            per_frame = np.where(total == 0.0, 0.5, d_head / total)
        owlness = float(per_frame.mean())
        reports[sid] = OwlnessReport(
            subject_id=sid,
            owlness=owlness,
            mean_head_dist=float(d_head.mean()),
            mean_pupil_dist=float(d_pupil.mean()),
            strategy=classify_strategy(owlness, thresholds),
            frame_count=int(ok.sum()),
        )
    return reports


# ---------------------------------------------------------------------------
# Leave-one-subject-out evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    modes: tuple[FeatureMode, ...] = (FeatureMode.HEAD_ONLY, FeatureMode.HEAD_AND_EYE)
    repetitions: int = 100
    confidence_threshold: float = 10.0
    forest: ForestConfig = ForestConfig()
    seed: int = 0
    min_frames_per_region: int = 120
    owl_thresholds: tuple[float, float] = DEFAULT_OWL_THRESHOLDS

    def __post_init__(self):
        if not self.modes:
            raise ValueError("at least one feature mode required")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.confidence_threshold >= 1.0:
            raise ValueError("confidence_threshold must be >= 1")


@dataclass
class ModeStats:
    """Accuracy distribution for one (subject, mode) over repetitions."""

    mode: FeatureMode
    accuracies: np.ndarray     # (repetitions,), NaN when nothing was accepted
    accepted_counts: np.ndarray
    evaluated_counts: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.nanmean(self.accuracies)) if np.any(~np.isnan(self.accuracies)) else math.nan

    @property
    def std(self) -> float:
        return float(np.nanstd(self.accuracies)) if np.any(~np.isnan(self.accuracies)) else math.nan


@dataclass
class UserEvaluation:
    subject_id: str
    stats: dict[FeatureMode, ModeStats]
    unbalanced_accepted: int   # accepted decisions in one plain pass (ledger row)


@dataclass
class StudyResult:
    config: EvalConfig
    users: list[UserEvaluation]
    confusions: dict[FeatureMode, ConfusionMatrix]
    owlness: dict[str, OwlnessReport]
    ledger: AttritionLedger


def check_sufficiency(ds: PreparedDataset, min_frames_per_region: int):
    for sid, subject in ds.subjects.items():
        counts = subject.region_counts()
        for code, count in enumerate(counts):
            if count < min_frames_per_region:
                raise InsufficientData(
                    f"subject {sid!r} has {int(count)} pupil-passing frames for "
                    f"region {REGIONS[code].value!r}, fewer than the required "
                    f"{min_frames_per_region}"
                )


def mode_matrix(subject: PreparedSubject, mode: FeatureMode, rows: np.ndarray) -> np.ndarray:
    if mode is FeatureMode.HEAD_ONLY:
        return subject.head[rows]
    return np.hstack([subject.head[rows], subject.pupil_uv[rows]])


def decide_batch(probs: np.ndarray, threshold: float):
    predicted = probs.argmax(axis=1)
    top_two = np.partition(probs, probs.shape[1] - 2, axis=1)[:, -2:]
    p2, p1 = top_two[:, 0], top_two[:, 1]
    with np.errstate(divide="ignore"):
        confidence = np.where(p2 == 0.0, np.inf, p1 / np.where(p2 == 0.0, 1.0, p2))
    return predicted, confidence, confidence > threshold


def evaluate_user(
    subject_id: str,
    ds: PreparedDataset,
    cfg: EvalConfig,
) -> tuple[UserEvaluation, dict[FeatureMode, ConfusionMatrix]]:
    """Hold one subject out, train on the rest, score with pruning.

    Each repetition redraws the balanced training subsample, the balanced
    test supersample, and the forest seed; both modes see identical draws.
    Returns the per-user stats and that user's confusion contributions.
    """
    if len(ds.subjects) < 2:
        raise InsufficientData("leave-one-out evaluation needs at least 2 subjects")
    check_sufficiency(ds, cfg.min_frames_per_region)
    held = ds.subjects[subject_id]
    user_index = ds.subject_ids().index(subject_id)

    pool_subjects = [s for sid, s in ds.subjects.items() if sid != subject_id]
    pool_rows = [np.nonzero(s.pupil_ok)[0] for s in pool_subjects]
    pool_labels = np.concatenate([s.labels[r] for s, r in zip(pool_subjects, pool_rows)])
    pool_X = {
        mode: np.vstack([mode_matrix(s, mode, r) for s, r in zip(pool_subjects, pool_rows)])
        for mode in cfg.modes
    }
    held_rows = np.nonzero(held.pupil_ok)[0]
    held_labels = held.labels[held_rows]
    held_X = {mode: mode_matrix(held, mode, held_rows) for mode in cfg.modes}

    accuracies = {mode: np.full(cfg.repetitions, math.nan) for mode in cfg.modes}
    accepted = {mode: np.zeros(cfg.repetitions, dtype=np.int64) for mode in cfg.modes}
    evaluated = {mode: np.zeros(cfg.repetitions, dtype=np.int64) for mode in cfg.modes}
    confusions = {mode: ConfusionMatrix() for mode in cfg.modes}
    unbalanced_accepted = 0
    primary = (
        FeatureMode.HEAD_AND_EYE if FeatureMode.HEAD_AND_EYE in cfg.modes else cfg.modes[0]
    )

    for rep in range(cfg.repetitions):
        rng = np.random.default_rng((cfg.seed & ((1 << 64) - 1), user_index, rep))
        train_sel = subsample_indices(pool_labels, N_REGIONS, rng)
        test_sel = supersample_indices(held_labels, N_REGIONS, rng)
        truth = held_labels[test_sel]
        for mode_idx, mode in enumerate(cfg.modes):
            forest_cfg = reseeded(cfg.forest, cfg.seed, user_index, rep, mode_idx)
            model = train_arrays(
                pool_X[mode][train_sel], pool_labels[train_sel], REGIONS, forest_cfg
            )
            probs = predict_proba_batch(model, held_X[mode][test_sel])
            predicted, _, keep = decide_batch(probs, cfg.confidence_threshold)
            evaluated[mode][rep] = truth.size
            accepted[mode][rep] = int(keep.sum())
            if keep.any():
                accuracies[mode][rep] = float((predicted[keep] == truth[keep]).mean())
                confusions[mode].add(truth[keep], predicted[keep])
            if rep == 0 and mode is primary and held_labels.size:
                plain = predict_proba_batch(model, held_X[mode])
                _, _, plain_keep = decide_batch(plain, cfg.confidence_threshold)
                unbalanced_accepted = int(plain_keep.sum())

    stats = {
        mode: ModeStats(
            mode=mode,
            accuracies=accuracies[mode],
            accepted_counts=accepted[mode],
            evaluated_counts=evaluated[mode],
        )
        for mode in cfg.modes
    }
    return (
        UserEvaluation(
            subject_id=subject_id, stats=stats, unbalanced_accepted=unbalanced_accepted
        ),
        confusions,
    )


def run_study(ds: PreparedDataset, cfg: EvalConfig) -> StudyResult:
    """Leave-one-subject-out over every subject, both modes, plus owlness.

    The ledger's confident row counts accepted decisions from one plain
    (unbalanced, single-repetition) pass per held-out subject, so it stays
    comparable with the raw face/pupil attrition counts.
    """
    check_sufficiency(ds, cfg.min_frames_per_region)
    owlness = owlness_from_prepared(ds, thresholds=cfg.owl_thresholds)
    users = []
    confusions = {mode: ConfusionMatrix() for mode in cfg.modes}
    confident = 0
    for sid in ds.subject_ids():
        evaluation, contributions = evaluate_user(sid, ds, cfg)
        users.append(evaluation)
        for mode in cfg.modes:
            confusions[mode].merge(contributions[mode])
        confident += evaluation.unbalanced_accepted
    ledger = AttritionLedger(
        total_frames=ds.total_records,
        faces_detected=ds.faces,
        pupils_detected=ds.pupils,
        confident_decisions=confident,
    )
    return StudyResult(
        config=cfg,
        users=users,
        confusions=confusions,
        owlness=owlness,
        ledger=ledger,
    )


# ---------------------------------------------------------------------------
# Accuracy deltas and the owlness correlation
# ---------------------------------------------------------------------------

def pearson(xs, ys) -> tuple[float, bool]:
    """Pearson r and whether it is defined (variance on both sides, n >= 2)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size != ys.size:
        raise ValueError("paired samples required")
    if xs.size < 2 or np.std(xs) == 0.0 or np.std(ys) == 0.0:
        return math.nan, False
    return float(np.corrcoef(xs, ys)[0, 1]), True


@dataclass
class DeltaReport:
    """Head-and-eye minus head-only accuracy, per region and per user."""

    per_region: list[tuple[str, float, float, float]]  # region, head, head+eye, delta
    per_user: list[tuple[str, float, float]]           # subject, owlness, delta
    pearson_r: float
    pearson_defined: bool
    overall_head_only: float
    overall_head_eye: float

    @property
    def overall_delta(self) -> float:
        return self.overall_head_eye - self.overall_head_only


def accuracy_delta_report(study: StudyResult) -> DeltaReport:
    if (
        FeatureMode.HEAD_ONLY not in study.confusions
        or FeatureMode.HEAD_AND_EYE not in study.confusions
    ):
        raise ModeMismatch("delta report needs both head-only and head-and-eye results")
    cm_head = study.confusions[FeatureMode.HEAD_ONLY]
    cm_both = study.confusions[FeatureMode.HEAD_AND_EYE]
    acc_head = cm_head.per_region_accuracy()
    acc_both = cm_both.per_region_accuracy()
    per_region = [
        (
            region.value,
            float(acc_head[i]),
            float(acc_both[i]),
            float(acc_both[i] - acc_head[i]),
        )
        for i, region in enumerate(REGIONS)
    ]
    per_user = []
    for user in study.users:
        delta = user.stats[FeatureMode.HEAD_AND_EYE].mean - user.stats[FeatureMode.HEAD_ONLY].mean
        owl = study.owlness[user.subject_id].owlness
        per_user.append((user.subject_id, owl, float(delta)))
    r, defined = pearson([m for _, m, _ in per_user], [d for _, _, d in per_user])
    return DeltaReport(
        per_region=per_region,
        per_user=per_user,
        pearson_r=r,
        pearson_defined=defined,
        overall_head_only=cm_head.overall_accuracy(),
        overall_head_eye=cm_both.overall_accuracy(),
    )
