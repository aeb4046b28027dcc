import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import pytest

from commute_od.geo import GeoPoint, haversine
from commute_od.routing import (
    CACHE_COLUMNS,
    HttpBackend,
    OfflineBackend,
    RateLimiter,
    RouteCache,
    RouteError,
    RouteEstimate,
    cache_key,
    route,
    route_all,
)

HOME = GeoPoint(29.75, -95.40)
WORK = GeoPoint(29.78, -95.36)


class MockServer:
    """Routing endpoint honouring the JSON contract; scripted failures per request count."""

    def __init__(self, fail_first=0, status=503, body=None):
        self.calls = []
        self.fail_first = fail_first
        self.status = status
        self.body = body
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                q = {k: v[0] for k, v in parse_qs(urlparse(self.path).query).items()}
                outer.calls.append((q, self.headers.get("X-Api-Key")))
                if len(outer.calls) <= outer.fail_first:
                    self.send_response(outer.status)
                    self.end_headers()
                    return
                if outer.body is not None:
                    payload = outer.body
                elif q["mode"] == "transit" and float(q["olat"]) > 40:
                    payload = {"routable": False}
                else:
                    d = haversine(float(q["olat"]), float(q["olon"]), float(q["dlat"]), float(q["dlon"]))
                    payload = {"routable": True, "distance_m": d, "duration_s": d / 10}
                data = json.dumps(payload).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *a):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/route"
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def server():
    s = MockServer()
    yield s
    s.close()


def test_offline_backend():
    e = route(HOME, WORK, "car")
    d = haversine(HOME.lat, HOME.lon, WORK.lat, WORK.lon)
    assert e.distance_m == pytest.approx(1.4 * d)
    assert e.duration_s == pytest.approx(1.4 * d / 12.5)
    t = OfflineBackend().route(HOME, WORK, "transit")
    assert t.duration_s == pytest.approx(1.4 * d / 6.0 + 600)
    with pytest.raises(RouteError):
        OfflineBackend().route(HOME, WORK, "bike")


def test_http_contract(server, monkeypatch):
    monkeypatch.setenv("ROUTE_KEY", "secret")
    e = HttpBackend(server.url, "ROUTE_KEY").route(HOME, WORK, "car")
    q, key = server.calls[0]
    assert key == "secret"
    assert q == {"olat": "29.75000", "olon": "-95.40000", "dlat": "29.78000", "dlon": "-95.36000",
                 "mode": "car", "depart": "08:00"}
    assert e.routable and e.source == "external" and e.duration_s == pytest.approx(e.distance_m / 10)
    nr = HttpBackend(server.url).route(GeoPoint(41, -95), WORK, "transit")
    assert not nr.routable


def test_malformed_and_client_errors():
    s = MockServer(body={"routable": True, "distance_m": "far"})
    try:
        with pytest.raises(RouteError):
            HttpBackend(s.url).route(HOME, WORK, "car")
    finally:
        s.close()
    s = MockServer(fail_first=5, status=404)
    try:
        res = route_all([("d", HOME, WORK)], ["car"], HttpBackend(s.url), attempts=3, backoff_s=0.0)
        assert len(s.calls) == 1 and ("d", "car") in res.errors
    finally:
        s.close()


def test_retry_with_backoff_then_success():
    s = MockServer(fail_first=2, status=503)
    try:
        t0 = time.monotonic()
        res = route_all([("d", HOME, WORK)], ["car"], HttpBackend(s.url), attempts=3, backoff_s=0.05)
        assert time.monotonic() - t0 >= 0.15  # 0.05 + 0.10
        assert len(s.calls) == 3 and ("d", "car") in res.estimates
    finally:
        s.close()


def test_retry_exhausted_is_recorded_not_raised():
    s = MockServer(fail_first=10, status=500)
    try:
        res = route_all([("d", HOME, WORK)], ["car", "transit"], HttpBackend(s.url), attempts=3, backoff_s=0.0)
        assert len(s.calls) == 6 and set(res.errors) == {("d", "car"), ("d", "transit")}
    finally:
        s.close()


def test_unreachable_endpoint():
    res = route_all([("d", HOME, WORK)], ["car"], HttpBackend("http://127.0.0.1:9/none", timeout_s=0.5),
                    attempts=2, backoff_s=0.0)
    assert "transport failure" in res.errors[("d", "car")]


def test_cache_dedup_and_reuse(server, tmp_path):
    path = tmp_path / "cache.csv"
    profiles = [("a", HOME, WORK), ("b", HOME, WORK), ("c", WORK, HOME)]
    res = route_all(profiles, ["car"], HttpBackend(server.url), RouteCache(str(path), "external"), max_concurrency=3)
    assert res.requests_made == 2 and len(server.calls) == 2
    assert res.estimates[("a", "car")] == res.estimates[("b", "car")]
    again = route_all(profiles, ["car"], HttpBackend(server.url), RouteCache(str(path), "external"))
    assert again.requests_made == 0 and again.cache_hits == 2 and len(server.calls) == 2
    assert again.estimates == res.estimates
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CACHE_COLUMNS) and len(lines) == 3


def test_corrupt_cache_rebuilt(tmp_path, caplog):
    path = tmp_path / "cache.csv"
    k = cache_key(HOME, WORK, "car")
    path.write_text(",".join(CACHE_COLUMNS) + "\n" + ",".join(k) + ",100.0,10.0,1\ngarbage\n")
    cache = RouteCache(str(path), "offline")
    assert cache.get(k) == RouteEstimate("car", 100.0, 10.0, "offline", True)
    assert "corrupt" in caplog.text
    assert len(path.read_text().splitlines()) == 2


def test_rate_limiter_spacing():
    lim = RateLimiter(20.0)
    t0 = time.monotonic()
    for _ in range(5):
        lim.wait()
    assert time.monotonic() - t0 >= 0.19
    RateLimiter(None).wait()
