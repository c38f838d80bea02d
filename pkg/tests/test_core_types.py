import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from overtake import core_types as ct
from overtake.core_types import (
    CanTrace,
    DatasetManifest,
    ManeuverLabel,
    ManifestEntry,
    ManifestError,
    TraceError,
    load_manifest,
    load_trace,
    save_manifest,
    save_trace,
)
from overtake.seeding import derive_seed, rng_for

from conftest import make_trace


def write_csv(path, rows, header=ct.CSV_HEADER):
    path.write_text(",".join(header) + "\n" + "".join(",".join(str(c) for c in r) + "\n" for r in rows))


def good_row(t, dist=100.0):
    return [t, 30.0, dist, 80.0, 0.0, 80.0, 0.0, 0.0, 0, 0, 0]


class TestSignalCatalog:
    def test_ten_signals_seven_continuous(self):
        assert [s.id for s in ct.SIGNALS] == list(range(1, 11))
        kinds = [s.kind for s in ct.SIGNALS]
        assert kinds[:7] == [ct.SignalKind.CONTINUOUS] * 7
        assert kinds[7:] == [ct.SignalKind.CATEGORICAL] * 3

    def test_declared_ranges(self):
        rng = {s.id: (s.low, s.high) for s in ct.SIGNALS}
        assert rng[1] == (0, 100)
        assert rng[2] == (0, 255)
        assert rng[3] == rng[5] == (0, 255)
        assert rng[4] == (-20, 20)
        assert rng[6] == rng[7] == (-10, 10)

    def test_header(self):
        assert ",".join(ct.CSV_HEADER) == ("t,accel_pedal_pct,dist_ahead_m,speed_ahead_kmh,rel_speed_kmh,"
                                           "speed_kmh,lat_acc_ms2,lon_acc_ms2,lane_change,left_ind,right_ind")


class TestCanTrace:
    def test_logged_axis_has_651_samples(self):
        t = ct.logged_time_axis()
        assert len(t) == 651 and t[0] == -20.0 and t[-1] == 45.0 and t[200] == 0.0

    def test_empty_trace_rejected(self):
        with pytest.raises(TraceError):
            CanTrace(np.zeros(0), np.zeros((0, 10)))

    def test_out_of_range_names_signal(self):
        with pytest.raises(TraceError, match="signal 2"):
            make_trace(n=5, dist_ahead_m=300.0)

    def test_categorical_must_be_binary(self):
        with pytest.raises(TraceError, match="signal 8"):
            make_trace(n=5, lane_change=0.5)

    def test_off_grid_time(self):
        t = np.array([0.0, 0.1, 0.25])
        with pytest.raises(TraceError, match="row 3"):
            CanTrace(t, make_trace(n=3).values)

    def test_arrays_are_read_only(self):
        tr = make_trace(n=3)
        with pytest.raises(ValueError):
            tr.values[0, 0] = 1.0

    def test_samples_view(self):
        s = next(make_trace(n=2).samples)
        assert len(s.continuous) == 7 and len(s.categorical) == 3 and s.t == -20.0

    def test_label_parse(self):
        assert ManeuverLabel.parse("1") is ManeuverLabel.OVERTAKE
        assert ManeuverLabel.parse(0) is ManeuverLabel.NO_OVERTAKE
        for bad in ("2", "yes", 1.5, True):
            with pytest.raises(ValueError):
                ManeuverLabel.parse(bad)


class TestTraceIO:
    def test_round_trip_651(self, tmp_path):
        rng = np.random.default_rng(1)
        tr = make_trace(
            accel_pedal_pct=rng.uniform(0, 100, 651), rel_speed_kmh=rng.normal(0, 3, 651),
            lat_acc_ms2=rng.normal(0, 1, 651)).with_meta(truck_id="t9", file_id="f", label=1)
        save_trace(tr, tmp_path / "a.csv")
        back = load_trace(tmp_path / "a.csv")
        assert len(back) == 651
        assert back == tr

    def test_label_sidecar(self, tmp_path):
        save_trace(make_trace(n=3).with_meta(label=ManeuverLabel.OVERTAKE), tmp_path / "x.csv")
        meta = json.loads((tmp_path / "x.meta.json").read_text())
        assert meta["label"] == "1"

    def test_unlabeled_sidecar(self, tmp_path):
        save_trace(make_trace(n=3), tmp_path / "x.csv")
        assert json.loads((tmp_path / "x.meta.json").read_text())["label"] == ""
        assert load_trace(tmp_path / "x.csv").label is None

    def test_distance_300_is_range_error(self, tmp_path):
        p = tmp_path / "bad.csv"
        write_csv(p, [good_row(0.0), good_row(0.1, dist=300.0)])
        with pytest.raises(TraceError, match=r"row 2.*signal 2") as exc:
            load_trace(p)
        assert exc.value.row == 2

    def test_duplicated_timestamp(self, tmp_path):
        p = tmp_path / "dup.csv"
        write_csv(p, [good_row(0.0), good_row(0.1), good_row(0.1)])
        with pytest.raises(TraceError, match="row 3.*strictly increasing"):
            load_trace(p)

    def test_wrong_column_count(self, tmp_path):
        p = tmp_path / "cols.csv"
        write_csv(p, [good_row(0.0), good_row(0.1)[:-1]])
        with pytest.raises(TraceError, match="row 2.*columns"):
            load_trace(p)

    def test_malformed_number(self, tmp_path):
        p = tmp_path / "num.csv"
        rows = [good_row(0.0), good_row(0.1)]
        rows[1][3] = "8o.0"
        write_csv(p, rows)
        with pytest.raises(TraceError, match="row 2.*malformed"):
            load_trace(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "h.csv"
        write_csv(p, [good_row(0.0)], header=("time",) + ct.SIGNAL_NAMES)
        with pytest.raises(TraceError, match="header"):
            load_trace(p)

    def test_header_only_file(self, tmp_path):
        p = tmp_path / "empty.csv"
        write_csv(p, [])
        with pytest.raises(TraceError):
            load_trace(p)

    @given(st.lists(st.tuples(st.floats(0, 100), st.floats(-20, 20), st.floats(-10, 10), st.booleans()),
                    min_size=1, max_size=30))
    def test_round_trip_is_exact(self, rows):
        import tempfile
        from pathlib import Path

        n = len(rows)
        a = np.array(rows, dtype=float)
        tr = make_trace(n=n, accel_pedal_pct=a[:, 0], rel_speed_kmh=a[:, 1], lat_acc_ms2=a[:, 2],
                        left_ind=a[:, 3])
        with tempfile.TemporaryDirectory() as d:
            save_trace(tr, Path(d) / "r.csv")
            back = load_trace(Path(d) / "r.csv")
        assert np.array_equal(back.values, tr.values) and np.array_equal(back.t, tr.t)


def table2_manifest() -> DatasetManifest:
    # per-truck (class0, class1) file counts of a large real-world dataset
    counts = {"t1": (125, 417), "t2": (163, 83), "t3": (8, 11), "t4": (81, 342), "t5": (5, 12)}
    entries = []
    for truck, (c0, c1) in counts.items():
        for lab, n in ((0, c0), (1, c1)):
            entries += [ManifestEntry(f"{truck}/{lab}_{i}.csv", truck, ManeuverLabel(lab)) for i in range(n)]
    return DatasetManifest(tuple(entries))


class TestManifest:
    def _write(self, tmp_path, entries, touch=True):
        for e in entries:
            if touch:
                (tmp_path / e["path"]).write_text("")
        (tmp_path / "m.json").write_text(json.dumps({"entries": entries}))
        return tmp_path / "m.json"

    def test_counts_two_trucks(self, tmp_path):
        ents = [{"path": f"{t}_{l}.csv", "truck": t, "label": l} for t in ("t1", "t2") for l in (0, 1)]
        m = load_manifest(self._write(tmp_path, ents))
        assert m.counts() == {"t1": (1, 1), "t2": (1, 1)}

    def test_missing_file_named(self, tmp_path):
        ents = [{"path": "present.csv", "truck": "t1", "label": 0}]
        p = self._write(tmp_path, ents)
        doc = json.loads(p.read_text())
        doc["entries"].append({"path": "absent.csv", "truck": "t1", "label": 1})
        p.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="absent.csv"):
            load_manifest(p)

    def test_duplicate_path(self, tmp_path):
        ents = [{"path": "a.csv", "truck": "t1", "label": 0}, {"path": "a.csv", "truck": "t1", "label": 1}]
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(self._write(tmp_path, ents))

    def test_unknown_label_token(self, tmp_path):
        ents = [{"path": "a.csv", "truck": "t1", "label": "overtake"}]
        with pytest.raises(ManifestError, match="label"):
            load_manifest(self._write(tmp_path, ents))

    def test_empty_truck(self, tmp_path):
        ents = [{"path": "a.csv", "truck": "", "label": 0}]
        with pytest.raises(ManifestError, match="truck"):
            load_manifest(self._write(tmp_path, ents))

    def test_table2_shape_total(self):
        m = table2_manifest()
        assert len(m) == 1247
        c = m.counts()
        assert c["t1"] == (125, 417)
        assert sum(v[0] for v in c.values()) == 382 and sum(v[1] for v in c.values()) == 865

    def test_round_trip(self, tmp_path):
        m = table2_manifest()
        save_manifest(m, tmp_path / "m.json")
        assert load_manifest(tmp_path / "m.json", check_files=False) == m

    def test_counts_pure(self):
        m = table2_manifest()
        assert m.counts() == m.counts() == DatasetManifest(m.entries).counts()


class TestSeeding:
    def test_matches_documented_scheme(self):
        import hashlib

        expected = int.from_bytes(hashlib.blake2b(b"0|t1|0", digest_size=8).digest(), "little")
        assert derive_seed(0, "t1", 0) == expected
        assert derive_seed(0, "t1", 0) != derive_seed(0, "t1", 1) != derive_seed(1, "t1", 0)

    def test_independent_of_call_order(self):
        a = [derive_seed(3, "x", i) for i in range(5)]
        b = [derive_seed(3, "x", i) for i in reversed(range(5))][::-1]
        assert a == b

    def test_rng_streams_reproducible(self):
        assert np.array_equal(rng_for(5, "a").random(4), rng_for(5, "a").random(4))
