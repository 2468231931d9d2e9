#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
#ifdef NS_CLI_PATH
    return NS_CLI_PATH;
#else
    const char* p = std::getenv("NS_CLI_PATH");
    REQUIRE_MESSAGE(p != nullptr, "NS_CLI_PATH must point at the nscad binary");
    return p;
#endif
}

int run_cli(const std::string& args) {
    std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

fs::path fresh_dir() {
    static int counter = 0;
    auto d = fs::temp_directory_path() / ("ns_cli_work_" + std::to_string(counter++));
    return d;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

long count_lines(const std::string& s) {
    long n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

struct Fixture {
    fs::path dir;
    Fixture() {
        dir = fresh_dir();
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string p(const std::string& rel) const { return (dir / rel).string(); }
};

// Shared tiny pipeline: synthetic data, trained model, NS and Z scores.
// Built once; later cases reuse the files.
const Fixture& pipeline() {
    static Fixture f;
    static bool built = false;
    if (!built) {
        REQUIRE(run_cli("synth --seed 3 --n 250 --out-dir " + f.p("syn")) == 0);
        REQUIRE(run_cli("train --input " + f.p("syn/synthetic.csv") +
                        " --behavioral y --contextual context --seed 1 --max-epochs 400"
                        " --window 40 --inducing-ratio 0.1 --out-dir " + f.p("mod")) == 0);
        REQUIRE(run_cli("score --method ns --model " + f.p("mod/model.json") + " --input " +
                        f.p("syn/synthetic.csv") + " --n-samples 500 --out-dir " +
                        f.p("ns")) == 0);
        REQUIRE(run_cli("score --method zscore --input " + f.p("syn/synthetic.csv") +
                        " --behavioral y --contextual context --out-dir " + f.p("z")) == 0);
        built = true;
    }
    return f;
}

} // namespace

TEST_CASE("synth: output shape, manifest, and byte-identical reruns") {
    const auto& f = pipeline();
    auto csv = read_file(f.p("syn/synthetic.csv"));
    CHECK(csv.rfind("context,y,true_mean,true_std\n", 0) == 0);
    CHECK(count_lines(csv) == 251);
    CHECK(read_file(f.p("syn/manifest.json")).find("\"command\": \"synth\"") !=
          std::string::npos);

    REQUIRE(run_cli("synth --seed 3 --n 250 --out-dir " + f.p("syn2")) == 0);
    CHECK(read_file(f.p("syn2/synthetic.csv")) == csv);

    REQUIRE(run_cli("synth --seed 4 --n 250 --out-dir " + f.p("syn3")) == 0);
    CHECK(read_file(f.p("syn3/synthetic.csv")) != csv);
}

TEST_CASE("inject: labels written, exit codes stable per error class") {
    const auto& f = pipeline();
    REQUIRE(run_cli("inject --input " + f.p("syn/synthetic.csv") +
                    " --behavioral y --contextual context --count 12 --seed 5 --out-dir " +
                    f.p("inj")) == 0);
    auto csv = read_file(f.p("inj/injected.csv"));
    CHECK(csv.find(",label\n") != std::string::npos);
    long ones = 0;
    std::istringstream ss(csv);
    std::string line;
    std::getline(ss, line); // header
    while (std::getline(ss, line))
        if (line.size() >= 2 && line.substr(line.size() - 2) == ",1") ++ones;
    CHECK(ones == 12);

    // usage error (no rows requested) vs data error (missing file)
    CHECK(run_cli("inject --input " + f.p("syn/synthetic.csv") +
                  " --behavioral y --contextual context --out-dir " + f.p("inj_bad")) == 2);
    CHECK(run_cli("inject --input " + f.p("no_such.csv") +
                  " --behavioral y --count 3 --out-dir " + f.p("inj_bad")) == 3);
}

TEST_CASE("train and score: schema, determinism, model reuse") {
    const auto& f = pipeline();
    auto scores = read_file(f.p("ns/scores.csv"));
    CHECK(scores.rfind("row_id,y,score,abs_score,hdi_low,hdi_high,width,verdict\n", 0) == 0);
    CHECK(count_lines(scores) == 251);
    CHECK((scores.find("normal") != std::string::npos));

    // rescoring with the same model and seed is byte-identical
    REQUIRE(run_cli("score --method ns --model " + f.p("mod/model.json") + " --input " +
                    f.p("syn/synthetic.csv") + " --n-samples 500 --out-dir " + f.p("ns2")) == 0);
    CHECK(read_file(f.p("ns2/scores.csv")) == scores);

    // zscore scores have empty interval columns
    auto z = read_file(f.p("z/scores.csv"));
    CHECK(z.find(",,,\n") != std::string::npos);

    // ns method requires a model
    CHECK(run_cli("score --method ns --input " + f.p("syn/synthetic.csv") + " --out-dir " +
                  f.p("bad")) == 2);
    CHECK(run_cli("score --method ns --model " + f.p("mod/model.json") +
                  " --input no_such.csv --out-dir " + f.p("bad")) == 3);
}

TEST_CASE("triage: classification examples and summary counts") {
    Fixture f;
    {
        std::ofstream z(f.p("z.csv"));
        z << "row_id,score\n0,3\n1,1\n2,2.5\n3,0.5\n";
        std::ofstream n(f.p("n.csv"));
        n << "row_id,hdi_low,hdi_high\n0,2.5,4\n1,1.5,2.5\n2,0.5,1.5\n3,0.2,1.0\n";
    }
    REQUIRE(run_cli("triage --zscores " + f.p("z.csv") + " --ns " + f.p("n.csv") +
                    " --out-dir " + f.p("tri")) == 0);
    auto t = read_file(f.p("tri/triage.csv"));
    CHECK(t.find("0,3,2.5,4,both-anomalous") != std::string::npos);
    CHECK(t.find("1,1,1.5,2.5,unreliable") != std::string::npos);
    CHECK(t.find("2,2.5,0.5,1.5,disagree") != std::string::npos);
    CHECK(t.find(",both-normal") != std::string::npos);
    CHECK(t.find("\n3,0.5,") != std::string::npos);
    auto sum = read_file(f.p("tri/triage_summary.json"));
    CHECK(sum.find("\"confirmed\": 2") != std::string::npos);
    CHECK(sum.find("\"total\": 4") != std::string::npos);

    // mismatched ids are a data error
    {
        std::ofstream n(f.p("n_bad.csv"));
        n << "row_id,hdi_low,hdi_high\n0,2.5,4\n1,1.5,2.5\n2,0.5,1.5\n9,0.2,1.0\n";
    }
    CHECK(run_cli("triage --zscores " + f.p("z.csv") + " --ns " + f.p("n_bad.csv") +
                  " --out-dir " + f.p("tri2")) == 3);
}

TEST_CASE("triage on the real pipeline outputs") {
    const auto& f = pipeline();
    REQUIRE(run_cli("triage --zscores " + f.p("z/scores.csv") + " --ns " + f.p("ns/scores.csv") +
                    " --out-dir " + f.p("tri")) == 0);
    auto sum = read_file(f.p("tri/triage_summary.json"));
    CHECK(sum.find("\"total\": 250") != std::string::npos);
}

TEST_CASE("benchmark: table layout, per-method score export, DeLong output") {
    const auto& f = pipeline();
    REQUIRE(run_cli("benchmark --input " + f.p("syn/synthetic.csv") +
                    " --behavioral y --contextual context --methods zscore,hbos"
                    " --seeds 1,2 --k 3 --ratio 0.05 --out-dir " + f.p("bm")) == 0);
    auto table = read_file(f.p("bm/benchmark.csv"));
    CHECK(table.rfind("method,roc_auc_mean", 0) == 0);
    CHECK(count_lines(table) == 3);
    CHECK(table.find("zscore,") != std::string::npos);
    CHECK(table.find("hbos,") != std::string::npos);

    auto sc = read_file(f.p("bm/scores_zscore.csv"));
    CHECK(sc.rfind("row_id,label,score\n", 0) == 0);
    CHECK(count_lines(sc) == 251);
    auto dl = read_file(f.p("bm/delong.csv"));
    CHECK(dl.find("zscore,hbos,") != std::string::npos);

    CHECK(run_cli("benchmark --input " + f.p("syn/synthetic.csv") +
                  " --behavioral y --methods nope --seeds 1 --ratio 0.05 --out-dir " +
                  f.p("bm2")) == 2);
    CHECK(run_cli("benchmark --input " + f.p("syn/synthetic.csv") +
                  " --behavioral y --seeds 1 --out-dir " + f.p("bm2")) == 2); // missing methods
}

TEST_CASE("sensitivity: reference row is zero delta; single config is a usage error") {
    const auto& f = pipeline();
    REQUIRE(run_cli("sensitivity --input " + f.p("syn/synthetic.csv") +
                    " --behavioral y --contextual context --kernels rq,rbf --max-epochs 150"
                    " --window 30 --inducing-ratio 0.1 --n-samples 300 --out-dir " +
                    f.p("sens")) == 0);
    auto table = read_file(f.p("sens/sensitivity.csv"));
    CHECK(table.rfind("config,mean_abs_delta_score,mean_abs_delta_width,train_seconds,epochs\n",
                      0) == 0);
    CHECK(table.find("rq,0,0,") != std::string::npos);
    CHECK(count_lines(table) == 3);

    CHECK(run_cli("sensitivity --input " + f.p("syn/synthetic.csv") +
                  " --behavioral y --kernels rq --out-dir " + f.p("sens2")) == 2);
}

TEST_CASE("rq2: report and plot-ready exports") {
    const auto& f = pipeline();
    REQUIRE(run_cli("rq2 --input " + f.p("syn/synthetic.csv") +
                    " --behavioral y --contextual context --detector iforest --model " +
                    f.p("mod/model.json") + " --n-samples 300 --out-dir " + f.p("rq2")) == 0);
    auto rep = read_file(f.p("rq2/rq2_report.json"));
    CHECK(rep.find("\"tau\"") != std::string::npos);
    CHECK(rep.find("\"detector\": \"iforest\"") != std::string::npos);
    auto rows = read_file(f.p("rq2/rq2_rows.csv"));
    CHECK(count_lines(rows) == 251);
    auto kde = read_file(f.p("rq2/rq2_kde.csv"));
    CHECK(kde.find("context-anomalous,") != std::string::npos);
    CHECK(kde.find("inlier,") != std::string::npos);

    CHECK(run_cli("rq2 --input " + f.p("syn/synthetic.csv") +
                  " --behavioral y --detector nope --model " + f.p("mod/model.json") +
                  " --out-dir " + f.p("rq2b")) == 2);
}

TEST_CASE("grid: raw-unit bounds, row count, resource guard") {
    const auto& f = pipeline();
    REQUIRE(run_cli("grid --model " + f.p("mod/model.json") +
                    " --y 100 --lo 0 --hi 60 --res 7 --n-samples 300 --out-dir " +
                    f.p("grid")) == 0);
    auto g = read_file(f.p("grid/grid.csv"));
    CHECK(g.rfind("context,score,abs_score,hdi_low,hdi_high,width,verdict\n", 0) == 0);
    CHECK(count_lines(g) == 8);
    CHECK(g.find("\n0,") != std::string::npos);  // raw-unit lower bound
    CHECK(g.find("\n60,") != std::string::npos); // raw-unit upper bound

    CHECK(run_cli("grid --model " + f.p("mod/model.json") +
                  " --y 100 --lo 0 --hi 60 --res 2000000 --out-dir " + f.p("grid2")) == 9);
}

TEST_CASE("config file supplies defaults that explicit flags override") {
    Fixture f;
    {
        std::ofstream c(f.p("cfg.json"));
        c << "{\"n\": 40, \"seed\": 9}\n";
    }
    REQUIRE(run_cli("synth --config " + f.p("cfg.json") + " --out-dir " + f.p("a")) == 0);
    CHECK(count_lines(read_file(f.p("a/synthetic.csv"))) == 41);

    REQUIRE(run_cli("synth --config " + f.p("cfg.json") + " --n 25 --out-dir " + f.p("b")) == 0);
    CHECK(count_lines(read_file(f.p("b/synthetic.csv"))) == 26);

    CHECK(run_cli("synth --config " + f.p("missing.json") + " --out-dir " + f.p("c")) == 2);
}

TEST_CASE("no subcommand or an unknown one is a usage error") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
}
