#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
// End-to-end checks of the installed command-line surface; each case drives
// the real binary (path in DJSR_BIN) through a scratch workspace.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "djsr/image_io.hpp"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* bin = std::getenv("DJSR_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

struct RunResult {
    int status;
    std::string out;
};

RunResult run(const std::string& args) {
    std::string cmd = "'" + binary() + "' " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    int rc = pclose(pipe);
    return RunResult{WEXITSTATUS(rc), out};
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "djsr_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int line_count(const std::string& s) {
    return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("help documents every flag") {
    CHECK(run("--help").status == 0);
    for (auto [sub, flags] : std::initializer_list<std::pair<const char*, const char*>>{
             {"dataset build", "--input-dir --output-dir --step --cfa --r"},
             {"dataset synth", "--output-dir --count --size --seed"},
             {"train", "--manifest --out --preset --steps --seed --batch --lr0 --patch --resume"},
             {"eval", "--checkpoint --manifest --baseline --out --tile"},
             {"infer", "--checkpoint --input --output --tile --bits"}}) {
        RunResult res = run(std::string(sub) + " --help");
        CHECK(res.status == 0);
        std::istringstream fl(flags);
        std::string flag;
        while (fl >> flag) {
            INFO(sub, " missing ", flag);
            CHECK(res.out.find(flag) != std::string::npos);
        }
    }
}

TEST_CASE("dataset build: empty input fails, one image yields pair plus manifest") {
    fs::path empty = fresh_dir("empty");
    fs::path out = fresh_dir("build_out");
    RunResult fail = run("dataset build --input-dir " + empty.string() + " --output-dir " +
                         out.string());
    CHECK(fail.status != 0);
    CHECK((!fs::exists(out) || fs::is_empty(out)));
}

TEST_CASE("workflow: synth, build, train, eval, infer") {
    fs::path src = fresh_dir("src");
    fs::path data = fresh_dir("data");
    fs::path run1 = fresh_dir("run1");
    fs::path run2 = fresh_dir("run2");

    CHECK(run("dataset synth --output-dir " + src.string() + " --count 2 --size 160 --seed 3")
              .status == 0);
    CHECK(run("dataset build --input-dir " + src.string() + " --output-dir " + data.string())
              .status == 0);
    CHECK(fs::exists(data / "manifest.tsv"));
    CHECK(fs::exists(data / "synth_0000_gt.png"));
    CHECK(fs::exists(data / "synth_0000_bayer.pgm"));

    const std::string train_args = " --manifest " + (data / "manifest.tsv").string() +
                                   " --preset desk --steps 2 --seed 9 --batch 2 --patch 16";
    CHECK(run("train --out " + run1.string() + train_args).status == 0);
    CHECK(run("train --out " + run2.string() + train_args).status == 0);
    CHECK(fs::exists(run1 / "checkpoint.djsr"));
    // identical seeds give identical logs and checkpoints
    CHECK(slurp(run1 / "metrics.csv") == slurp(run2 / "metrics.csv"));
    CHECK(slurp(run1 / "checkpoint.djsr") == slurp(run2 / "checkpoint.djsr"));

    // zero steps: checkpoint only, no training rows
    fs::path run0 = fresh_dir("run0");
    CHECK(run("train --out " + run0.string() + " --manifest " + (data / "manifest.tsv").string() +
              " --preset desk --steps 0 --batch 2 --patch 16")
              .status == 0);
    CHECK(line_count(slurp(run0 / "metrics.csv")) == 1);  // header only

    // eval: one row per manifest entry plus the mean row
    fs::path report = fresh_dir("report") / "report.csv";
    CHECK(run("eval --checkpoint " + (run1 / "checkpoint.djsr").string() + " --manifest " +
              (data / "manifest.tsv").string() + " --tile 32 --out " + report.string())
              .status == 0);
    std::string csv = slurp(report);
    CHECK(line_count(csv) == 1 + 2 + 1);
    CHECK(csv.find("image,psnr_db,ssim\n") == 0);

    RunResult with_base = run("eval --checkpoint " + (run1 / "checkpoint.djsr").string() +
                              " --manifest " + (data / "manifest.tsv").string() +
                              " --tile 32 --baseline bilinear-bicubic");
    CHECK(with_base.status == 0);
    CHECK(with_base.out.find("baseline_psnr_db") != std::string::npos);

    // infer: 40x40 Bayer -> 80x80 PNG, deterministic bytes, tile-invariant
    fs::path png1 = fresh_dir("infer") / "a.png";
    fs::path png2 = png1.parent_path() / "b.png";
    const std::string infer_base = "infer --checkpoint " + (run1 / "checkpoint.djsr").string() +
                                   " --input " + (data / "synth_0000_bayer.pgm").string();
    CHECK(run(infer_base + " --tile 32 --output " + png1.string()).status == 0);
    CHECK(run(infer_base + " --tile 32 --output " + png2.string()).status == 0);
    CHECK(slurp(png1) == slurp(png2));
    CHECK(run(infer_base + " --tile 48 --output " + png2.string()).status == 0);
    CHECK(slurp(png1) == slurp(png2));  // stitching is tile-size invariant

    djsr::Image decoded = djsr::read_png(png1.string());
    CHECK(decoded.height == 80);  // 160 source -> 80 GT -> 40 bayer -> 80 SR
    CHECK(decoded.width == 80);

    // failure leaves no partial outputs behind
    fs::path bad_out = fresh_dir("bad_train");
    RunResult bad = run("train --out " + bad_out.string() + " --manifest /nonexistent.tsv");
    CHECK(bad.status != 0);
    CHECK(fs::is_empty(bad_out));
}

TEST_SUITE_END();
