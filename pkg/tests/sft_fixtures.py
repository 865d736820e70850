"""Ten hand-built trajectories with the filter verdict each should get."""

from helpers import TrajBuilder
from vragloop.grammar import InvalidReason
from vragloop.training import Rejection as R
from vragloop.trajectory import Query

Q = Query("sft", "How many fulfillment centers did Northwind operate in 2010?", "50", frozenset({"d1_p2"}))
Q2 = Query("sft2", "Which city hosts the headquarters of the company with 50 centers?", "Denver",
           frozenset({"d1_p2", "d1_p3"}))


def _clean():
    return TrajBuilder(Q).search("d1_p2", "need the 2010 report").answer("50", "d1_p2 says 50 centers")


def _clean_with_crop():
    return (TrajBuilder(Q).search("d1_p2", "need the report").crop((100, 100, 400, 300), "table too small")
            .answer("50", "zoomed: 50 centers"))


def _clean_two_hop():
    return (TrajBuilder(Q2).search("d1_p2", "first the company").search("d1_p3", "Northwind has 50 centers")
            .answer("Denver", "HQ in Denver"))


def _crop_first():
    return TrajBuilder(Q).rejected_crop((10, 10, 200, 200), "zoom").search("d1_p2", "x").answer("50", "50")


def _crop_after_invalid():
    return (TrajBuilder(Q).search("d1_p2", "look").invalid(reason=InvalidReason.EMPTY_PAYLOAD)
            .crop((10, 10, 200, 200), "zoom").answer("50", "50"))


def _full_image_crop():
    return TrajBuilder(Q).search("d1_p2", "look").crop((0, 0, 1000, 1000), "zoom all").answer("50", "50")


def _incomplete():
    return TrajBuilder(Q2).search("d1_p2", "look").answer("Denver", "guessing")


def _eleven_searches():
    b = TrajBuilder(Q).search("d1_p2", "start")
    for i in range(10):
        b.search(f"d1_x{i}", "more")
    return b.answer("50", "50")


def _ten_searches():
    b = TrajBuilder(Q).search("d1_p2", "start")
    for i in range(9):
        b.search(f"d1_x{i}", "more")
    return b.answer("50", "50")


def _wrong_and_incomplete():
    return TrajBuilder(Q2).search("d1_p9", "look").answer("Boston", "probably Boston")


FIXTURES = [
    ("clean", _clean, ()),
    ("clean_with_crop", _clean_with_crop, ()),
    ("clean_two_hop", _clean_two_hop, ()),
    ("ten_searches_is_allowed", _ten_searches, ()),
    ("crop_before_retrieval", _crop_first, (R.BBOX_NOT_AFTER_RETRIEVAL,)),
    ("crop_after_invalid_turn", _crop_after_invalid, (R.BBOX_NOT_AFTER_RETRIEVAL,)),
    ("full_image_crop", _full_image_crop, (R.TRIVIAL_FULL_IMAGE_CROP,)),
    ("incomplete", _incomplete, (R.INCOMPLETE_RETRIEVAL,)),
    ("eleven_searches", _eleven_searches, (R.TOO_MANY_SEARCHES,)),
    ("wrong_and_incomplete", _wrong_and_incomplete, (R.INCOMPLETE_RETRIEVAL, R.WRONG_ANSWER)),
]
