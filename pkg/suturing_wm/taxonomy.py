"""
Sub-stitch taxonomy, expert annotations and caption templating.
"""

__all__ = [
    "Task",
    "Action",
    "Quality",
    "SubStitchAnnotation",
    "ClassIds",
    "NUM_CLASSES",
    "NULL_CLASS_INDEX",
    "all_classes",
    "class_index",
    "class_from_index",
    "generate_caption",
    "caption_for_classes",
    "parse_caption",
]

import dataclasses
import re
from enum import Enum
from itertools import product
from typing import Any

from suturing_wm.errors import MalformedCaption, PreconditionError, UnknownClassId


class Task(str, Enum):
    """
    Enum class for the suturing exercise

    Attributes
    ----------
    RAILROAD: Railroad suturing exercise (needle travels left to right).
    BACKHAND: Backhand suturing exercise (needle travels right to left).
    """
    RAILROAD = "railroad"
    BACKHAND = "backhand"

    def __str__(self):
        return self.value


class Action(str, Enum):
    """
    Enum class for the sub-stitch action

    Attributes
    ----------
    POSITIONING: Grasping and orienting the needle.
    TARGETING: Approaching the tissue at the entry point.
    DRIVING: Passing the needle through the tissue.
    WITHDRAWAL: Extracting the needle along its curve.
    """
    POSITIONING = "positioning"
    TARGETING = "targeting"
    DRIVING = "driving"
    WITHDRAWAL = "withdrawal"

    def __str__(self):
        return self.value


class Quality(str, Enum):
    """
    Enum class for the binary technical score of a sub-stitch

    Attributes
    ----------
    IDEAL: Technique judged ideal by the expert annotator.
    NON_IDEAL: Technique judged non-ideal by the expert annotator.
    """
    IDEAL = "ideal"
    NON_IDEAL = "non_ideal"

    @property
    def article_phrase(self) -> str:
        return "An ideal" if self is Quality.IDEAL else "A non-ideal"

    def __str__(self):
        return self.value


# (quality, action, task), the order captions are read in
ClassIds = tuple[Quality, Action, Task]

NUM_CLASSES = len(Quality) * len(Action) * len(Task)
NULL_CLASS_INDEX = NUM_CLASSES

_QUALITIES = list(Quality)
_ACTIONS = list(Action)
_TASKS = list(Task)


@dataclasses.dataclass(frozen=True)
class SubStitchAnnotation:
    """
    One expert label on a session video.

    Attributes
    ----------
    session_id: Identifier of the annotated session video.
    task: Suturing exercise the sub-stitch belongs to.
    action: Sub-stitch action.
    quality: Binary technical score.
    start_time: Start of the span in seconds.
    end_time: End of the span in seconds (exclusive).
    """
    session_id: str
    task: Task
    action: Action
    quality: Quality
    start_time: float
    end_time: float

    def __post_init__(self):
        try:
            object.__setattr__(self, "task", Task(self.task))
            object.__setattr__(self, "action", Action(self.action))
            object.__setattr__(self, "quality", Quality(self.quality))
        except ValueError as e:
            raise UnknownClassId(str(e)) from e
        if not self.start_time < self.end_time:
            raise PreconditionError(
                f"annotation {self.session_id}: start_time {self.start_time} "
                f"must be before end_time {self.end_time}")

    @property
    def classes(self) -> ClassIds:
        return self.quality, self.action, self.task

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "task": self.task.value,
            "action": self.action.value,
            "quality": self.quality.value,
            "start_time": self.start_time,
            "end_time": self.end_time,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SubStitchAnnotation":
        return cls(
            session_id=str(d["session_id"]),
            task=d["task"],
            action=d["action"],
            quality=d["quality"],
            start_time=float(d["start_time"]),
            end_time=float(d["end_time"]),
        )


def all_classes() -> list[ClassIds]:
    """
    All 16 (quality, action, task) caption classes in index order.

    Returns:
        list[ClassIds]: classes ordered so that position == class_index.
    """
    return [(q, a, t) for q, a, t in product(_QUALITIES, _ACTIONS, _TASKS)]


def class_index(quality: Quality, action: Action, task: Task) -> int:
    """
    Flat index of a caption class in [0, NUM_CLASSES).

    Raises:
        UnknownClassId: if any member is not part of the taxonomy.
    """
    try:
        q = _QUALITIES.index(Quality(quality))
        a = _ACTIONS.index(Action(action))
        t = _TASKS.index(Task(task))
    except ValueError as e:
        raise UnknownClassId(str(e)) from e
    return (q * len(_ACTIONS) + a) * len(_TASKS) + t


def class_from_index(index: int) -> ClassIds:
    if not 0 <= index < NUM_CLASSES:
        raise UnknownClassId(f"class index {index} out of range [0, {NUM_CLASSES})")  # noqa: E501
    return all_classes()[index]


def generate_caption(annotation: SubStitchAnnotation) -> str:
    """
    Render the caption template for an annotation.

    Args:
        annotation (SubStitchAnnotation): expert label.

    Returns:
        str: e.g. "A non-ideal clip of a needle driving action during a
            backhand task."
    """
    return caption_for_classes(annotation.classes)


def caption_for_classes(classes: ClassIds) -> str:
    quality, action, task = Quality(classes[0]), Action(classes[1]), Task(classes[2])
    return (f"{quality.article_phrase} clip of a needle {action.value} "
            f"action during a {task.value} task.")


_CAPTION_RE = re.compile(
    r"(?P<quality>An ideal|A non-ideal) clip of a needle "
    r"(?P<action>" + "|".join(a.value for a in Action) + r") action during a "
    r"(?P<task>" + "|".join(t.value for t in Task) + r") task\."
)


def parse_caption(caption: str) -> ClassIds:
    """
    Inverse of generate_caption.

    Args:
        caption (str): caption text.

    Raises:
        MalformedCaption: if the caption does not follow the template.

    Returns:
        ClassIds: (quality, action, task)
    """
    m = _CAPTION_RE.fullmatch(caption)
    if m is None:
        raise MalformedCaption(f"not a sub-stitch caption: {caption!r}")
    quality = Quality.IDEAL if m["quality"] == "An ideal" else Quality.NON_IDEAL
    return quality, Action(m["action"]), Task(m["task"])
