import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfport.data import (DataError, MacroSeries, PricePanel, ReturnPanel,
                         load_macro, load_prices, load_sectors,
                         to_excess_returns)


def write(path, text):
    path.write_text(text)
    return path


class TestLoadPrices:
    def test_direct_parse(self, tmp_path):
        p = write(tmp_path / "p.csv",
                  "date,AAA,BBB\n2020-01-01,100,50\n2020-01-02,101,51\n"
                  "2020-01-03,102,52\n")
        panel = load_prices(p)
        assert panel.prices.shape == (3, 2)
        assert panel.tickers == ["AAA", "BBB"]
        assert panel.dropped_rows == 0

    def test_negative_price_row_dropped(self, tmp_path):
        p = write(tmp_path / "p.csv",
                  "date,AAA\n2020-01-01,100\n2020-01-02,-5\n2020-01-03,102\n")
        panel = load_prices(p)
        assert panel.prices.shape == (2, 1)
        assert panel.dropped_rows == 1

    def test_missing_cell_dropped(self, tmp_path):
        p = write(tmp_path / "p.csv",
                  "date,AAA,BBB\n2020-01-01,100,50\n2020-01-02,101,\n"
                  "2020-01-03,102,52\n")
        assert load_prices(p).dropped_rows == 1

    def test_duplicate_dates_error(self, tmp_path):
        p = write(tmp_path / "p.csv",
                  "date,AAA\n2020-01-01,100\n2020-01-01,101\n")
        with pytest.raises(DataError, match="duplicate dates"):
            load_prices(p)

    def test_zero_usable_rows_error(self, tmp_path):
        p = write(tmp_path / "p.csv", "date,AAA\nnot-a-date,100\n")
        with pytest.raises(DataError, match="no usable"):
            load_prices(p)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(DataError):
            load_prices(tmp_path / "absent.csv")

    def test_missing_date_column(self, tmp_path):
        p = write(tmp_path / "p.csv", "AAA,BBB\n100,50\n")
        with pytest.raises(DataError, match="date"):
            load_prices(p)


def panel_from(prices, dates=None):
    import datetime as dt
    prices = np.asarray(prices, dtype=float)
    t, n = prices.shape
    dates = dates or [dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(t)]
    return PricePanel(dates, [f"A{i}" for i in range(n)], prices)


class TestExcessReturns:
    def test_arithmetic(self):
        r = to_excess_returns(panel_from([[100.0], [110.0]]))
        assert np.allclose(r.returns, [[0.10]], atol=1e-15)

    def test_risk_free_subtracted(self):
        r = to_excess_returns(panel_from([[100.0], [110.0]]), risk_free=0.01)
        assert np.allclose(r.returns, [[0.09]], atol=1e-15)

    def test_constant_prices_zero_returns(self):
        r = to_excess_returns(panel_from([[50.0], [50.0], [50.0]]))
        assert np.all(r.returns == 0.0)

    def test_too_short(self):
        with pytest.raises(DataError):
            to_excess_returns(panel_from([[100.0]]))

    @given(st.lists(st.floats(min_value=1.0, max_value=1e4), min_size=2,
                    max_size=30))
    def test_length_shrinks_by_one(self, prices):
        panel = panel_from(np.asarray(prices)[:, None])
        assert to_excess_returns(panel).returns.shape[0] == len(prices) - 1

    @given(st.lists(st.floats(min_value=1.0, max_value=1e4), min_size=2,
                    max_size=20),
           st.floats(min_value=0.01, max_value=100.0))
    def test_scale_free(self, prices, c):
        base = np.asarray(prices)[:, None]
        r1 = to_excess_returns(panel_from(base)).returns
        r2 = to_excess_returns(panel_from(c * base)).returns
        assert np.allclose(r1, r2, rtol=1e-12, atol=1e-15)


class TestReturnPanelRoundTrip:
    @settings(max_examples=25)
    @given(t=st.integers(2, 8), n=st.integers(1, 4),
           seed=st.integers(0, 2**31 - 1))
    def test_csv_round_trip_exact(self, t, n, seed, tmp_path_factory):
        rng = np.random.default_rng(seed)
        import datetime as dt
        dates = [dt.date(2021, 1, 1) + dt.timedelta(days=i) for i in range(t)]
        panel = ReturnPanel(dates, [f"A{i}" for i in range(n)],
                            rng.standard_normal((t, n)) * 0.05)
        path = tmp_path_factory.mktemp("rt") / "r.csv"
        panel.to_csv(path)
        back = ReturnPanel.from_csv(path)
        assert back.dates == panel.dates
        assert back.tickers == panel.tickers
        assert np.array_equal(back.returns, panel.returns)


class TestMacro:
    def test_parse_two_variables(self, tmp_path):
        p = write(tmp_path / "m.csv",
                  "variable,date,value\n"
                  "a,2020-01-01,1\na,2020-01-08,2\na,2020-01-15,3\n"
                  "b,2020-01-31,10\nb,2020-02-29,11\nb,2020-03-31,12\n")
        panel = load_macro(p)
        assert panel.names == ["a", "b"]

    def test_irregular_gaps_preserved(self, tmp_path):
        p = write(tmp_path / "m.csv",
                  "variable,date,value\n"
                  "a,2020-01-01,1\na,2020-01-08,2\na,2020-02-08,3\n")
        s = load_macro(p).series[0]
        gaps = [(b - a).days for a, b in zip(s.times, s.times[1:])]
        assert gaps == [7, 31]

    def test_out_of_order_timestamps(self, tmp_path):
        p = write(tmp_path / "m.csv",
                  "variable,date,value\n"
                  "a,2020-01-08,1\na,2020-01-01,2\n")
        with pytest.raises(DataError, match="increasing"):
            load_macro(p)

    def test_series_invariant(self):
        import datetime as dt
        with pytest.raises(DataError):
            MacroSeries("x", [dt.date(2020, 1, 2), dt.date(2020, 1, 1)],
                        np.array([1.0, 2.0]))


class TestSectors:
    def test_load_and_lookup(self, tmp_path):
        p = write(tmp_path / "s.csv", "ticker,sector\nAAA,tech\nBBB,energy\n")
        sm = load_sectors(p)
        assert sm.sectors == ["energy", "tech"]
        assert sm.sector_of("AAA") == "tech"

    def test_unmapped_ticker(self, tmp_path):
        p = write(tmp_path / "s.csv", "ticker,sector\nAAA,tech\n")
        with pytest.raises(DataError, match="CCC"):
            load_sectors(p).sector_of("CCC")

    def test_missing_column(self, tmp_path):
        p = write(tmp_path / "s.csv", "ticker\nAAA\n")
        with pytest.raises(DataError, match="sector"):
            load_sectors(p)
