#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attnseg/backbone.hpp"
#include "attnseg/data.hpp"
#include "attnseg/optimizer.hpp"
#include "helpers.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace attnseg;
using namespace attnseg::test;
using nlohmann::json;

static int run_cli(const std::string& args) {
    const std::string cmd = std::string(ATTNSEG_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

static std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

static void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

static void make_prepared_dir(const std::string& dir, int count = 1) {
    std::vector<AnnotatedSample> samples;
    for (int i = 0; i < count; ++i) {
        AnnotatedSample s = two_region_sample();
        s.id = "sample" + std::to_string(i);
        samples.push_back(std::move(s));
    }
    save_samples(samples, dir);
}

TEST_CASE("cli: usage errors exit with code 2") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("optimize --train /nonexistent") == 2);  // missing --out
    CHECK(run_cli("--help") == 0);
}

TEST_CASE("cli prepare: celeba fixture and manifest determinism") {
    TempDir dir("cli_prepare");
    fs::create_directories(fs::path(dir.str()) / "raw/images");
    fs::create_directories(fs::path(dir.str()) / "raw/masks");
    write_image(ImageU8::filled(512, 512, 9, 9, 9), dir.str() + "/raw/images/0.png");
    LabelMask hair = LabelMask::filled(512, 512, 0);
    for (int y = 0; y < 100; ++y)
        for (int x = 0; x < 512; ++x) hair.at(y, x) = 255;
    write_mask(hair, dir.str() + "/raw/masks/0_hair.png");

    CHECK(run_cli("prepare --dataset celeba --raw " + dir.str() + "/raw --out " + dir.str() +
                  "/out1") == 0);
    CHECK(run_cli("prepare --dataset celeba --raw " + dir.str() + "/raw --out " + dir.str() +
                  "/out2") == 0);
    const std::string m1 = slurp(fs::path(dir.str()) / "out1/manifest.json");
    CHECK(m1 == slurp(fs::path(dir.str()) / "out2/manifest.json"));
    CHECK(slurp(fs::path(dir.str()) / "out1/0.mask.png") ==
          slurp(fs::path(dir.str()) / "out2/0.mask.png"));
    json man = json::parse(m1);
    CHECK(man["count"] == 1);
    CHECK(man["class_names"].size() == 10);

    CHECK(run_cli("prepare --dataset pascal-car --raw " + dir.str() + "/raw --out " +
                  dir.str() + "/out3") == 2);  // pascal needs --mapping
    CHECK(run_cli("prepare --dataset nope --raw " + dir.str() + "/raw --out " + dir.str() +
                  "/out4") == 2);
}

TEST_CASE("cli optimize/segment/evaluate: end-to-end on the toy backbone") {
    TempDir dir("cli_e2e");
    make_prepared_dir(dir.str() + "/train", 1);
    make_prepared_dir(dir.str() + "/test", 2);
    write_file(dir.str() + "/config.json",
               R"({"backbone":{"name":"toy"},"optimize":{"epochs":3,"seed":1}})");

    const std::string ckpt = dir.str() + "/emb.ckpt";
    CHECK(run_cli("optimize --config " + dir.str() + "/config.json --train " + dir.str() +
                  "/train --out " + ckpt) == 0);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".manifest.json"));
    // loss log: header plus one line per gradient step
    std::istringstream loss(slurp(ckpt + ".loss.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(loss, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 1 + 3);

    CHECK(run_cli("segment --config " + dir.str() + "/config.json --ckpt " + ckpt +
                  " --images " + dir.str() + "/test --out " + dir.str() + "/seg --overlay") == 0);
    CHECK(fs::exists(dir.str() + "/seg/sample0.img.png"));       // label mask
    CHECK(fs::exists(dir.str() + "/seg/sample1.img.png"));
    CHECK(fs::exists(dir.str() + "/seg/sample0.img.json"));      // provenance
    CHECK(fs::exists(dir.str() + "/seg/sample0.img.overlay.png"));
    CHECK(fs::exists(dir.str() + "/seg/manifest.json"));

    CHECK(run_cli("evaluate --config " + dir.str() + "/config.json --ckpt " + ckpt + " --test " +
                  dir.str() + "/test --seeds 0,1 --out " + dir.str() + "/eval") == 0);
    json report = json::parse(slurp(fs::path(dir.str()) / "eval/reports/report.json"));
    CHECK(report["seeds"].size() == 2);
    CHECK(report["per_class_mean"].size() == 2);
    CHECK(fs::exists(dir.str() + "/eval/reports/table.csv"));
    CHECK(fs::exists(dir.str() + "/eval/reports/table.md"));
}

TEST_CASE("cli: numerical failure maps to exit 3, bad config to exit 2") {
    TempDir dir("cli_fail");
    make_prepared_dir(dir.str() + "/train");
    write_file(dir.str() + "/diverge.json",
               R"({"optimize":{"epochs":3,"lr":1e200}})");
    CHECK(run_cli("optimize --config " + dir.str() + "/diverge.json --train " + dir.str() +
                  "/train --out " + dir.str() + "/d.ckpt") == 3);

    write_file(dir.str() + "/broken.json", "{not json");
    CHECK(run_cli("optimize --config " + dir.str() + "/broken.json --train " + dir.str() +
                  "/train --out " + dir.str() + "/b.ckpt") == 2);
    write_file(dir.str() + "/badver.json", R"({"version":2})");
    CHECK(run_cli("optimize --config " + dir.str() + "/badver.json --train " + dir.str() +
                  "/train --out " + dir.str() + "/v.ckpt") == 2);
}

TEST_CASE("cli: checkpoint/backbone mismatch maps to exit 4") {
    TempDir dir("cli_compat");
    make_prepared_dir(dir.str() + "/imgs");
    auto bb = make_backbone("toy");
    PromptEmbeddings emb = bb->encode_prompt("part part", 2);
    BackboneDescriptor other = bb->descriptor();
    other.param_digest ^= 0x1;
    save_embeddings(emb, other, 0, dir.str() + "/alien.ckpt");
    CHECK(run_cli("segment --ckpt " + dir.str() + "/alien.ckpt --images " + dir.str() +
                  "/imgs --out " + dir.str() + "/seg") == 4);
}

TEST_CASE("cli ablate: baseline plus one run per grid value") {
    TempDir dir("cli_ablate");
    make_prepared_dir(dir.str() + "/train", 1);
    make_prepared_dir(dir.str() + "/test", 1);
    write_file(dir.str() + "/config.json", R"({"optimize":{"epochs":1,"seed":1}})");
    write_file(dir.str() + "/grid.json", R"({"use_was":[false]})");
    CHECK(run_cli("ablate --config " + dir.str() + "/config.json --grid " + dir.str() +
                  "/grid.json --train " + dir.str() + "/train --test " + dir.str() +
                  "/test --out " + dir.str() + "/ab") == 0);
    CHECK(fs::exists(dir.str() + "/ab/baseline/embeddings.ckpt"));
    CHECK(fs::exists(dir.str() + "/ab/use_was=false/embeddings.ckpt"));
    std::istringstream cmp(slurp(fs::path(dir.str()) / "ab/reports/comparison.csv"));
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(cmp, line))
        if (!line.empty()) rows.push_back(line);
    REQUIRE(rows.size() == 3);  // header + baseline + override
    CHECK(rows[1].rfind("baseline,", 0) == 0);
    CHECK(rows[2].rfind("use_was=false,", 0) == 0);

    write_file(dir.str() + "/badgrid.json", R"({"bogus_axis":[1]})");
    CHECK(run_cli("ablate --config " + dir.str() + "/config.json --grid " + dir.str() +
                  "/badgrid.json --train " + dir.str() + "/train --test " + dir.str() +
                  "/test --out " + dir.str() + "/ab2") == 2);
}
