import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(tag, title): acceptance criterion covered by the test")
    config.stash[_KEY] = {}


@pytest.fixture
def record(request):
    """Attach a one-line measurement to the running acceptance test."""

    def _record(detail: str):
        request.node.user_properties.append(("detail", detail))
        print(detail)

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    tag, title = mark.args
    results = item.config.stash[_KEY].setdefault(tag, {"title": title, "ok": True, "details": []})
    if rep.failed:
        results["ok"] = False
    if rep.when == "call":
        results["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_KEY]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(results, key=lambda t: int(t[2:])):
        r = results[tag]
        status = "PASS" if r["ok"] else "FAIL"
        terminalreporter.write_line(f"{tag} {status}  {r['title']}")
        for d in r["details"]:
            terminalreporter.write_line(f"      {d}")
