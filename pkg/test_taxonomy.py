import pytest

from suturing_wm import (
    NULL_CLASS_INDEX,
    NUM_CLASSES,
    Action,
    MalformedCaption,
    PreconditionError,
    Quality,
    SubStitchAnnotation,
    Task,
    UnknownClassId,
    all_classes,
    caption_for_classes,
    class_from_index,
    class_index,
    generate_caption,
    parse_caption,
)
from conftest import annotation_for


@pytest.mark.parametrize("classes, caption", [
    ((Quality.NON_IDEAL, Action.DRIVING, Task.BACKHAND),
     "A non-ideal clip of a needle driving action during a backhand task."),
    ((Quality.IDEAL, Action.POSITIONING, Task.RAILROAD),
     "An ideal clip of a needle positioning action during a railroad task."),
    ((Quality.NON_IDEAL, Action.WITHDRAWAL, Task.BACKHAND),
     "A non-ideal clip of a needle withdrawal action during a backhand task."),
])
def test_caption_template(classes, caption):
    quality, action, task = classes
    assert generate_caption(annotation_for(quality, action, task)) == caption
    assert parse_caption(caption) == classes


def test_caption_round_trip_all_classes():
    classes = all_classes()
    assert len(classes) == NUM_CLASSES == 16
    captions = {caption_for_classes(c) for c in classes}
    assert len(captions) == 16
    for c in classes:
        assert parse_caption(caption_for_classes(c)) == c


@pytest.mark.parametrize("caption", [
    "hello world",
    "An ideal clip of a needle sewing action during a railroad task.",
    "An ideal clip of a needle driving action during a railroad task",
    "A ideal clip of a needle driving action during a railroad task.",
    "An ideal clip of a needle driving action during a railroad task.\n",
    " An ideal clip of a needle driving action during a railroad task.",
    "",
])
def test_malformed_captions(caption):
    with pytest.raises(MalformedCaption):
        parse_caption(caption)


def test_class_index_is_a_bijection():
    indices = [class_index(*c) for c in all_classes()]
    assert indices == list(range(NUM_CLASSES))
    assert NULL_CLASS_INDEX == NUM_CLASSES
    for i in indices:
        assert class_index(*class_from_index(i)) == i
    with pytest.raises(UnknownClassId):
        class_from_index(NUM_CLASSES)


def test_annotation_validation():
    with pytest.raises(PreconditionError):
        annotation_for(start=2.0, end=1.0)
    with pytest.raises(UnknownClassId):
        SubStitchAnnotation("s", "knotting", "driving", "ideal", 0.0, 1.0)
    with pytest.raises(UnknownClassId):
        class_index("excellent", "driving", "railroad")


def test_annotation_dict_round_trip():
    a = annotation_for(Quality.NON_IDEAL, Action.TARGETING, Task.BACKHAND,
                       session_id="s07", start=1.5, end=3.25)
    assert SubStitchAnnotation.from_dict(a.to_dict()) == a
    assert str(a.task) == "backhand"
