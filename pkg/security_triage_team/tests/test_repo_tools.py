from security_triage_team.reasoning.agent import run_tool
from security_triage_team.tools.repo_tools import TOOL_NAMES, build_repo_tools, tool_schemas

EXPECTED_TOOLS = (
    "get_repo_tree",
    "find_important_files",
    "read_file",
    "read_snippet",
    "extract_dependency_files",
    "detect_entrypoints",
    "search_package_usage",
    "search_repo",
    "extract_enclosing_function",
)


def test_all_nine_tools_are_bound(host_probe_repo):
    tools = build_repo_tools(host_probe_repo)
    assert TOOL_NAMES == EXPECTED_TOOLS
    assert tuple(tools) == EXPECTED_TOOLS
    assert all(tool.repo is host_probe_repo for tool in tools.values())


def test_observations_are_plain_text(host_probe_repo):
    tools = build_repo_tools(host_probe_repo)
    assert tools["get_repo_tree"].run(max_depth=1).splitlines()[0] == "./"
    assert "README.md [readme]" in tools["find_important_files"].run()
    assert "19 |" in tools["read_snippet"].run(path="box.py", line=19, context=2)
    span = tools["extract_enclosing_function"].run(path="box.py", line=19)
    assert span.splitlines()[0] == "function execute_command box.py:17-21"
    entries = tools["detect_entrypoints"].run()
    assert "main.py" in entries and "[main_guard]" in entries
    assert tools["search_repo"].run(query="shell=True").startswith("box.py:19:")
    assert tools["search_package_usage"].run(package="requests") == \
        "No usage of 'requests' found in any code file."
    assert tools["extract_dependency_files"].run() == "No dependency manifests found."


def test_navigation_errors_become_observations(host_probe_repo):
    tools = build_repo_tools(host_probe_repo)
    assert tools["read_file"].run(path="../etc/passwd").startswith("ERROR:")
    assert tools["read_snippet"].run(path="box.py", line=500, context=1).startswith("ERROR:")
    assert tools["search_repo"].run(query="(", regex=True).startswith("ERROR:")


def test_run_tool_validates_arguments(host_probe_repo):
    tools = build_repo_tools(host_probe_repo)
    assert run_tool(tools["read_snippet"], {"path": "box.py"}).startswith("ERROR: invalid arguments for read_snippet")
    assert run_tool(tools["read_snippet"], {"path": "box.py", "line": 0}).startswith("ERROR: invalid arguments")
    assert run_tool(tools["read_snippet"], {"path": "box.py", "line": 19}).startswith("box.py:14-21")


def test_dependency_listing(unused_dependency_repo):
    tools = build_repo_tools(unused_dependency_repo)
    assert tools["extract_dependency_files"].run().splitlines() == [
        "requirements.txt: numpy==1.26.4",
        "requirements.txt: requests==2.29.0",
    ]


def test_tool_schemas_follow_argument_models(host_probe_repo):
    declarations = tool_schemas(build_repo_tools(host_probe_repo))
    by_name = {d["function"]["name"]: d["function"] for d in declarations}
    assert tuple(by_name) == EXPECTED_TOOLS
    snippet = by_name["read_snippet"]["parameters"]
    assert snippet["type"] == "object"
    assert set(snippet["required"]) == {"path", "line"}
    assert set(snippet["properties"]) == {"path", "line", "context"}
    assert by_name["find_important_files"]["parameters"]["properties"] == {}
