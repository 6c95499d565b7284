import pytest

from acme.aggregate import AggregateOp
from acme.query import (ALL_HOSTS, Clause, PredicateExpr, QueryParseError,
                        Selection, SensorQuery, SensorRef, apply_selection,
                        compare_values, eval_predicate, parse_predicate,
                        parse_query)


def test_parse_basic_query():
    q = parse_query("/ising?port=9000&sensor=load&host=ALL&op=AVG&epoch=60000")
    assert q == SensorQuery(9000, "load", ALL_HOSTS, AggregateOp.AVG, 60000, None, None)
    assert not q.is_snapshot()


def test_parse_snapshot_median():
    q = parse_query("/ising?port=9000&sensor=load&host=ALL&op=MEDIAN&epoch=0")
    assert q.op == AggregateOp.MEDIAN
    assert q.is_snapshot()


def test_parse_unknown_op_names_field():
    with pytest.raises(QueryParseError) as err:
        parse_query("/ising?port=9000&sensor=load&host=ALL&op=FOO&epoch=0")
    assert err.value.field == "op"


def test_parse_negative_epoch_rejected():
    with pytest.raises(QueryParseError) as err:
        parse_query("/ising?port=1&sensor=s&op=MIN&epoch=-5")
    assert err.value.field == "epoch"


def test_parse_bad_regex_rejected():
    with pytest.raises(QueryParseError) as err:
        parse_query("/ising?port=1&sensor=s&op=MIN&epoch=0&rowcol=1&rowregex=%28")
    assert err.value.field == "rowregex"


def test_parse_missing_required_fields():
    for url, field in [("/ising?sensor=s&op=MIN", "port"),
                       ("/ising?port=1&op=MIN", "sensor"),
                       ("/ising?port=1&sensor=s", "op"),
                       ("/ising?port=1&sensor=s&op=MIN&valcol=2", "valcol")]:
        with pytest.raises(QueryParseError) as err:
            parse_query(url)
        assert err.value.field == field


def test_parse_selection_and_predicate():
    url = ("/ising?port=9000&sensor=finger&host=ALL&op=VALUE&epoch=0"
           "&rowcol=1&rowregex=%5Ealice%24&valcol=2"
           "&pred=9001%3Atraffic%20%3E%20100%3BAND9002%3Aload%20%3C%205")
    q = parse_query(url)
    assert q.selection == Selection(1, "^alice$", 2)
    assert q.predicate is not None
    assert len(q.predicate.clauses) == 2
    assert q.predicate.joiners == ("AND",)
    assert q.predicate.clauses[0] == Clause(SensorRef(9001, "traffic"), ">", "100", None)


def test_url_round_trip():
    pred = parse_predicate("9001:traffic:1:^x$:2 >= 9002:load;OR9003:mem != idle")
    q = SensorQuery(9000, "finger", "host7", AggregateOp.VALUE, 5000,
                    Selection(1, "^a.ice$", 2), pred)
    assert parse_query(q.to_url()) == q


def test_apply_selection_filter_and_project():
    raw = "alice,host1\nbob,host2"
    assert apply_selection(raw, Selection(1, "^alice$", 2)) == ["host1"]


def test_apply_selection_identity_without_selection():
    raw = "alice,host1\nbob,host2"
    assert apply_selection(raw, None) == ["alice,host1", "bob,host2"]


def test_apply_selection_finger_style():
    raw = ("alice,pts/0,host-a.example.org\n"
           "bob,pts/1,host-b.example.org\n"
           "alice,pts/2,host-c.example.org")
    got = apply_selection(raw, Selection(1, "^alice$", 3))
    assert got == ["host-a.example.org", "host-c.example.org"]


def test_apply_selection_column_beyond_width_non_matching():
    raw = "a,b\nc"
    assert apply_selection(raw, Selection(2, ".", None)) == ["a,b"]
    assert apply_selection(raw, Selection(1, ".", 5)) == []


def test_apply_selection_row_kept_whole_when_no_valcol():
    raw = "x,1\ny,2"
    assert apply_selection(raw, Selection(2, "^1$", None)) == ["x,1"]


def test_compare_values_numeric_and_lexical():
    assert compare_values("5", ">=", "5")
    assert compare_values("10", ">", "9")       # numeric, not lexical
    assert not compare_values("abc", ">", "b")  # lexical fallback
    assert compare_values("0.5", "<", "00.75")
    assert compare_values("x", "!=", "y")
    assert compare_values("x", "=", "x")


def test_eval_predicate_and_or_folding():
    table = {(1, "traffic"): "120", (1, "load"): "0.3"}
    fetch = lambda port, sensor: table.get((port, sensor))
    pred = parse_predicate("1:traffic > 100;AND1:load < 1")
    assert eval_predicate(fetch, pred)
    pred = parse_predicate("1:traffic > 1000;OR1:load < 1")
    assert eval_predicate(fetch, pred)
    # left-associative fold: (F OR T) AND F -> F
    pred = parse_predicate("1:traffic > 1000;OR1:load < 1;AND1:traffic > 1000")
    assert not eval_predicate(fetch, pred)


def test_eval_predicate_sensor_down_is_false():
    pred = parse_predicate("1:gone > 0;OR1:alive > 0")
    fetch = lambda port, sensor: "1" if sensor == "alive" else None
    # an unreachable referenced sensor invalidates the whole predicate
    assert not eval_predicate(fetch, pred)


def test_eval_predicate_ref_to_ref():
    table = {(1, "a"): "10", (2, "b"): "9"}
    fetch = lambda port, sensor: table.get((port, sensor))
    assert eval_predicate(fetch, parse_predicate("1:a > 2:b"))
    assert not eval_predicate(fetch, parse_predicate("1:a < 2:b"))


def test_eval_predicate_with_selection_on_ref():
    table = {(1, "users"): "alice,4\nbob,9"}
    fetch = lambda port, sensor: table.get((port, sensor))
    pred = parse_predicate("1:users:1:^bob$:2 > 5")
    assert eval_predicate(fetch, pred)


def test_predicate_parse_errors():
    with pytest.raises(QueryParseError):
        parse_predicate("no-comparator-here")
    with pytest.raises(QueryParseError):
        parse_predicate("notaport:x > 1")
    with pytest.raises(QueryParseError):
        parse_predicate("1:x:9 > 1")  # malformed selection
