#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>
#include <unistd.h>

#include "crownseg/binary_io.hpp"
#include "crownseg/error.hpp"
#include "crownseg/raster_io.hpp"
#include "crownseg/render.hpp"
#include "crownseg/rng.hpp"
#include "crownseg/run_config.hpp"

using namespace crownseg;
namespace fs = std::filesystem;

namespace {

struct CommandResult {
    int status = -1;
    std::string output; // stdout and stderr interleaved
};

CommandResult run(const std::string& args) {
    CommandResult r;
    const std::string cmd = std::string(CROWNSEG_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("crownseg_cli_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const std::string& path) { return read_file_bytes(path); }

const char* kSmallScene =
    "--set scene.width=64 --set scene.height=64 --set scene.classes=3 --set scene.crowns=6 "
    "--set scene.radius_min=5 --set scene.radius_max=8 --set scene.labeled_fraction=0.7";
const char* kSmallTrain =
    "--set model.base_filters=4 --set sampler.tile_size=16 --set sampler.tiles_per_epoch=16 "
    "--set sampler.grid_overlap=0.75 --set train.epochs=2 --set train.batch_size=8 --set train.val_fraction=0.25 "
    "--set predict.tile=32 --set train.lr0=0.01";

} // namespace

TEST_CASE("raster formats round trip bit-exactly") {
    Rng rng(1);
    Raster r(5, 3, 4);
    for (auto& v : r.data) v = static_cast<float>(rng.normal());
    r.data[0] = -0.0f;
    r.data[1] = 1e-40f; // subnormal
    CHECK(decode_hsc(encode_hsc(r)) == r);

    LabelMask l(4, 4, -1);
    l(1, 2) = 7;
    CHECK(decode_lbl(encode_lbl(l)) == l);
    ItcMask itc(3, 2, 0);
    itc(2, 1) = 12;
    CHECK(decode_itc(encode_itc(itc)) == itc);
    DistanceMap d(2, 5, 0.25f);
    d(1, 4) = 1.0f;
    CHECK(decode_dst(encode_dst(d)) == d);
    ProbabilityVolume p(3, 3, 2, 0.5f);
    p.at(1, 2, 2) = 0.125f;
    CHECK(decode_prb(encode_prb(p)) == p);

    TempDir tmp;
    write_hsc(tmp / "a.hsc", r);
    CHECK(read_hsc(tmp / "a.hsc") == r);
    CHECK(peek_magic(tmp / "a.hsc") == "HSC1");
    write_prb(tmp / "p.prb", p);
    CHECK(read_prb(tmp / "p.prb") == p);
    CHECK_THROWS_AS(read_lbl(tmp / "missing.lbl"), IoError);
}

TEST_CASE("raster format errors") {
    LabelMask l(4, 2, 0);
    auto bytes = encode_lbl(l);
    auto bad = bytes;
    std::copy_n("XXXX", 4, bad.begin());
    CHECK_THROWS_WITH_AS(decode_lbl(bad), doctest::Contains("offset 0"), FormatError);
    CHECK_THROWS_AS(decode_hsc(bytes), FormatError); // wrong kind

    CHECK_THROWS_AS(decode_lbl(std::vector<char>(bytes.begin(), bytes.end() - 1)), LengthError);
    CHECK_THROWS_AS(decode_lbl(std::vector<char>(bytes.begin(), bytes.begin() + 6)), LengthError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_lbl(trailing), FormatError);

    l(3, 1) = -2;
    CHECK_THROWS_AS(decode_lbl(encode_lbl(l)), ValidationError);
    ItcMask itc(2, 2, 0);
    itc(0, 0) = -1;
    CHECK_THROWS_AS(decode_itc(encode_itc(itc)), ValidationError);

    ByteWriter w;
    w.bytes("HSC1");
    w.u32(1u << 16);
    w.u32(1u << 16);
    w.u32(1u << 16);
    CHECK_THROWS_AS(decode_hsc(w.buffer()), ParameterError);
    ByteWriter z;
    z.bytes("DST1");
    z.u32(0);
    z.u32(4);
    CHECK_THROWS_AS(decode_dst(z.buffer()), ParameterError);
}

TEST_CASE("rendering") {
    const auto pal = palette_by_name("classes");
    LabelMask constant(6, 5, 2);
    const auto a = render_class_map(constant, pal);
    CHECK(a == render_class_map(constant, pal));
    CHECK(a[0] == 'B');
    CHECK(a[1] == 'M');
    // pixel data offset is stored at byte 10; rows of 6 indices are padded to 8
    auto data_offset = [](const std::vector<char>& bmp) {
        ByteReader in(bmp);
        in.bytes(10);
        return static_cast<std::size_t>(in.u32());
    };
    std::size_t data = data_offset(a);
    const std::size_t row = 8;
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 6; ++x) CHECK(static_cast<unsigned char>(a[data + y * row + x]) == 2);

    LabelMask too_many(2, 1, 0);
    too_many(1, 0) = static_cast<std::int32_t>(pal.size());
    CHECK_THROWS_AS(render_class_map(too_many, pal), ParameterError);
    CHECK_THROWS(palette_by_name("rainbow"));

    const auto gray = palette_by_name("gray");
    for (std::size_t i = 1; i < gray.size(); ++i) CHECK(luminance(gray[i]) >= luminance(gray[i - 1]));
    Rng rng(4);
    DistanceMap d(16, 1);
    for (auto& v : d.data) v = static_cast<float>(rng.uniform());
    const auto img = render_distance_map(d, gray);
    data = data_offset(img);
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) {
            if (!(d.data[i] < d.data[j])) continue;
            const auto li = luminance(gray[static_cast<unsigned char>(img[data + i])]);
            const auto lj = luminance(gray[static_cast<unsigned char>(img[data + j])]);
            CHECK(li <= lj);
        }
    CHECK(legend_text(pal, 3, true).find("unlabeled=#000000") != std::string::npos);
}

TEST_CASE("run configuration") {
    RunConfig cfg;
    CHECK(cfg.model().base_filters == 32);
    CHECK(cfg.predict_overlaps() == std::vector<double>{0.1, 0.3, 0.5});
    cfg.merge_text("# comment\nscene.classes = 3\ntrain.epochs=4\n", "inline");
    cfg.merge_assignment("model.mode=single");
    CHECK(cfg.scene().classes == 3);
    CHECK(cfg.model().classes == 3);
    CHECK(cfg.train().epochs == 4);
    CHECK(cfg.model().mode == TaskMode::single_task);
    CHECK_THROWS_AS(cfg.set("train.epoch", "3"), ConfigError);
    CHECK_THROWS_AS(cfg.merge_assignment("no_equals_sign"), ConfigError);
    CHECK_THROWS_AS(cfg.merge_text("scene.widht = 3\n", "inline"), ConfigError);
    cfg.set("train.epochs", "many");
    CHECK_THROWS_AS(cfg.train(), ConfigError);

    RunConfig other;
    other.merge_text(RunConfig().echo(), "echo");
    CHECK(other.echo() == RunConfig().echo());
}

TEST_CASE("command-line errors are one machine-readable line") {
    auto r = run("frobnicate");
    CHECK(r.status == 2);
    CHECK(r.output.rfind("error: USAGE_ERROR:", 0) == 0);

    r = run("predict --checkpoint /nonexistent/model.ckp --scene /nonexistent --out /tmp/x");
    CHECK(r.status == 1);
    CHECK(r.output.rfind("error: IO_ERROR:", 0) == 0);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);

    r = run("synth --out /tmp/crownseg_unused --set scene.nonsense=1");
    CHECK(r.status == 1);
    CHECK(r.output.rfind("error: CONFIG_ERROR:", 0) == 0);
}

TEST_CASE("end-to-end commands are reproducible") {
    TempDir tmp;
    for (const char* dir : {"s1", "s2"}) {
        const auto r = run(std::string("synth ") + kSmallScene + " --seed 5 --out " + (tmp / dir));
        REQUIRE_MESSAGE(r.status == 0, r.output);
    }
    for (const char* f : {"image.hsc", "truth.lbl", "labels.lbl", "itc.itc", "distance.dst", "crowns.csv"})
        CHECK(slurp(tmp / (std::string("s1/") + f)) == slurp(tmp / (std::string("s2/") + f)));

    auto r = run("targets --itc " + (tmp / "s1/train_itc.itc") + " --out " + (tmp / "t.dst"));
    REQUIRE_MESSAGE(r.status == 0, r.output);
    CHECK(read_dst(tmp / "t.dst").width == 64);

    for (const char* dir : {"m1", "m2"}) {
        r = run(std::string("train ") + kSmallScene + " " + kSmallTrain + " --seed 9 --scene " + (tmp / "s1") +
                " --out " + (tmp / dir));
        REQUIRE_MESSAGE(r.status == 0, r.output);
    }
    CHECK(slurp(tmp / "m1/model.ckp") == slurp(tmp / "m2/model.ckp"));
    CHECK(slurp(tmp / "m1/report.txt") == slurp(tmp / "m2/report.txt"));

    r = run(std::string("predict ") + kSmallTrain + " --checkpoint " + (tmp / "m1/model.ckp") + " --scene " +
            (tmp / "s1") + " --out " + (tmp / "p"));
    REQUIRE_MESSAGE(r.status == 0, r.output);
    const auto probs = read_prb(tmp / "p/probs.prb");
    CHECK(probs.width == 64);
    CHECK(probs.classes == 3);

    r = run("eval --pred " + (tmp / "p/probs.prb") + " --labels " + (tmp / "s1/test_labels.lbl") + " --out " +
            (tmp / "e"));
    REQUIRE_MESSAGE(r.status == 0, r.output);
    std::ifstream metrics(tmp / "e/metrics.txt");
    std::string first;
    std::getline(metrics, first);
    CHECK(first.rfind("oa=", 0) == 0);

    r = run("render --in " + (tmp / "p/classes.lbl") + " --palette classes --out " + (tmp / "c.bmp"));
    REQUIRE_MESSAGE(r.status == 0, r.output);
    const auto bmp1 = slurp(tmp / "c.bmp");
    run("render --in " + (tmp / "p/classes.lbl") + " --palette classes --out " + (tmp / "c2.bmp"));
    CHECK(bmp1 == slurp(tmp / "c2.bmp"));
    CHECK(fs::exists(tmp / "c.bmp.legend.txt"));
}
