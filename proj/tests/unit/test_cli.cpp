#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "hcic/cli.hpp"
#include "hcic/fixtures.hpp"

using namespace hcic;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    int code = cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int n = 0;
        path = fs::temp_directory_path() / ("hcic_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::string fixture_path(const char* name) { return (fs::path(fixtures::fixture_dir()) / name).string(); }

std::vector<json> read_jsonl(const std::string& p) {
    std::vector<json> v;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) v.push_back(json::parse(line));
    return v;
}

}  // namespace

TEST_CASE("cli usage errors and help") {
    CHECK(invoke({"--help"}).code == 0);
    CHECK(invoke({"run", "--help"}).code == 0);
    CHECK(invoke({}).code == cli::kExitUsage);
    CHECK(invoke({"frobnicate"}).code == cli::kExitUsage);
    CHECK(invoke({"run", "/no/such/file.himg"}).code == cli::kExitUsage);
    CHECK(invoke({"run", fixture_path("fig2.s"), "--ehd-preset", "huge"}).code == cli::kExitUsage);
    CHECK(invoke({"attack", "rop", "--class", "teleport"}).code == cli::kExitUsage);
    CHECK(invoke({"attack", "no_such_fixture", "--class", "rop"}).code == cli::kExitUsage);
    auto r = invoke({"scan", fixture_path("fig2.s"), "--max-len", "11"});
    CHECK(r.code == cli::kExitUsage);
    CHECK_FALSE(r.err.empty());
    // Help text documents the exit-code map.
    CHECK(invoke({"--help"}).out.find("2 CRA alarm") != std::string::npos);
}

TEST_CASE("cli exit code map") {
    CHECK(cli::exit_code_for(cpu::ExitStatus{5}) == 0);
    CHECK(cli::exit_code_for(cpu::CraAlarm{}) == 2);
    CHECK(cli::exit_code_for(cpu::Fault{}) == 3);
    CHECK(cli::exit_code_for(cpu::Timeout{}) == 4);

    TempDir d;
    spit(d / "f.s", "main:\n  ret\n");
    CHECK(invoke({"run", d / "f.s", "--no-hcic"}).code == cli::kExitFault);
    CHECK(invoke({"run", fixture_path("fig2.s"), "--no-hcic", "--max-steps", "3"}).code == cli::kExitTimeout);
}

TEST_CASE("cli pipeline: benign fixture hardened and run") {
    TempDir d;
    spit(d / "in.txt", "hello");
    REQUIRE(invoke({"assemble", fixture_path("fig7.s"), "-o", d / "fig7.img"}).code == 0);
    REQUIRE(invoke({"profile", d / "fig7.img", "--input-file", d / "in.txt", "-o", d / "t.json"}).code == 0);
    auto t = json::parse(slurp(d / "t.json"));
    CHECK(t.at("format") == "hcic-targets");
    CHECK(t.at("version") == 1);
    CHECK(t.at("targets").at("jmp_targets").size() == 1);
    REQUIRE(invoke({"harden", d / "fig7.img", "--targets", d / "t.json", "-o", d / "fig7.himg"}).code == 0);

    auto plain = invoke({"run", d / "fig7.img", "--no-hcic", "--input-file", d / "in.txt"});
    auto hard = invoke({"run", d / "fig7.himg", "--input-file", d / "in.txt", "--trace", d / "tr.jsonl"});
    CHECK(plain.code == 0);
    CHECK(hard.code == 0);
    CHECK(hard.out == plain.out);

    auto trace = read_jsonl(d / "tr.jsonl");
    REQUIRE(trace.size() > 2);
    CHECK(trace.back().at("type") == "summary");
    CHECK(trace.back().at("terminal").at("kind") == "exit");
    CHECK(trace.back().at("counters").at("decrypted_fetches").get<int>() > 0);
    for (std::size_t i = 0; i + 1 < trace.size(); ++i) CHECK(trace[i].at("seq").get<std::size_t>() == i);

    auto rep = invoke({"report", "--orig", d / "fig7.img", "--hard", d / "fig7.himg", "--input-file", d / "in.txt",
                    "--targets", d / "t.json", "--trace", d / "tr.jsonl"});
    REQUIRE(rep.code == 0);
    auto r = json::parse(rep.out);
    CHECK(r.at("air").at("closed_form") == r.at("air").at("per_insn"));
    CHECK(r.at("size_overhead_bytes") == 4);
    CHECK(r.at("gadgets_hardened").at("allowed_ret") == 0);

    auto scan = invoke({"scan", d / "fig7.himg", "--json"});
    REQUIRE(scan.code == 0);
    CHECK(json::parse(scan.out).at("counts").at("allowed_ret") == 0);
}

TEST_CASE("cli runs are reproducible from the run configuration") {
    TempDir d;
    const auto src = fixture_path("callheavy.s");
    REQUIRE(invoke({"harden", src, "-o", d / "h.himg"}).code == 0);
    auto run = [&](const std::string& trace, std::vector<std::string> extra) {
        std::vector<std::string> a{"run", d / "h.himg", "--trace", d / trace};
        a.insert(a.end(), extra.begin(), extra.end());
        return invoke(a).code;
    };
    CHECK(run("a.jsonl", {"--puf-seed", "9", "--load-nonce", "3"}) == 0);
    CHECK(run("b.jsonl", {"--puf-seed", "9", "--load-nonce", "3"}) == 0);
    CHECK(run("c.jsonl", {"--puf-seed", "10", "--load-nonce", "3"}) == 0);
    CHECK(slurp(d / "a.jsonl") == slurp(d / "b.jsonl"));
    // A different device gives different keys, hence different EHD words.
    CHECK(slurp(d / "a.jsonl") != slurp(d / "c.jsonl"));

    auto g1 = invoke({"attack", "--class", "guess", "--ehd-preset", "demo8", "--trials", "4000", "--threads", "1"});
    auto g2 = invoke({"attack", "--class", "guess", "--ehd-preset", "demo8", "--trials", "4000", "--threads", "3"});
    CHECK(g1.code == 0);
    CHECK(g1.out == g2.out);
}

TEST_CASE("cli attack rop is detected under HCIC and succeeds without it") {
    TempDir d;
    auto prot = invoke({"attack", "rop", "--class", "rop", "--report", d / "r.json"});
    CHECK(prot.code == cli::kExitAlarm);
    auto r = json::parse(slurp(d / "r.json"));
    CHECK(r.at("detected") == true);
    CHECK(r.at("succeeded") == false);

    auto base = invoke({"attack", "rop", "--class", "rop", "--no-hcic", "--payload-out", d / "p.bin"});
    CHECK(base.code == 0);
    CHECK(json::parse(base.out).at("succeeded") == true);

    // Replaying the delivered bytes through `run` gives the same baseline success.
    auto run = invoke({"run", fixture_path("rop.s"), "--no-hcic", "--input-file", d / "p.bin", "--trace", d / "t.jsonl"});
    CHECK(run.code == 0);
    bool privileged = false;
    for (const auto& ev : read_jsonl(d / "t.jsonl"))
        if (ev.at("type") == "syscall" && ev.at("vector") == "0x80") privileged = true;
    CHECK(privileged);
    CHECK(read_jsonl(d / "t.jsonl").back().at("privileged").size() == 1);
}

TEST_CASE("cli ffr attack classes") {
    CHECK(invoke({"attack", "ffr_same", "--class", "ffr"}).code == 0);
    auto cross = invoke({"attack", "ffr_cross", "--class", "ffr"});
    CHECK(json::parse(cross.out).at("detected") == true);
    CHECK(cross.code != 0);
    // Mismatched class for the fixture is an operational error.
    CHECK(invoke({"attack", "rop", "--class", "jop"}).code == 1);
}
