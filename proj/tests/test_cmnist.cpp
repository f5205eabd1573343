#include "corrshift/cmnist.hpp"
#include "corrshift/error.hpp"
#include "corrshift/tensor_io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

using namespace corrshift;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("corrshift_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

RawMnist tiny() {
    RawMnist r;
    r.labels = {3, 7};
    r.pixels.resize(2 * 784);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
    return r;
}

const RawMnist& fixture_train() {
    static const RawMnist r = load_idx(std::string(CORRSHIFT_DATA_DIR) + "/train-images-idx3-ubyte",
                                       std::string(CORRSHIFT_DATA_DIR) + "/train-labels-idx1-ubyte");
    return r;
}

const RawMnist& fixture_test() {
    static const RawMnist r = load_idx(std::string(CORRSHIFT_DATA_DIR) + "/t10k-images-idx3-ubyte",
                                       std::string(CORRSHIFT_DATA_DIR) + "/t10k-labels-idx1-ubyte");
    return r;
}

Rgb pixel(const LabeledDataset& d, std::size_t i, std::size_t k) {
    const std::size_t hw = 784;
    return {d.x[(i * 3) * hw + k], d.x[(i * 3 + 1) * hw + k], d.x[(i * 3 + 2) * hw + k]};
}

Rgb as_f32(const Rgb& c) { return {static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2])}; }

} // namespace

TEST_CASE("IDX round trip is bit exact") {
    TempDir t("idx");
    const RawMnist r = tiny();
    write_idx(r, t.path / "img", t.path / "lbl");
    const RawMnist back = load_idx(t.path / "img", t.path / "lbl");
    CHECK(back.pixels == r.pixels);
    CHECK(back.labels == r.labels);
}

TEST_CASE("IDX errors are specific") {
    TempDir t("idx_err");
    const RawMnist r = tiny();
    write_idx(r, t.path / "img", t.path / "lbl");
    CHECK_THROWS_WITH_AS(load_idx(t.path / "lbl", t.path / "lbl"), doctest::Contains("bad magic"), FormatError);
    CHECK_THROWS_WITH_AS(load_idx(t.path / "img", t.path / "img"), doctest::Contains("bad magic"), FormatError);

    std::vector<char> bytes = read_bytes(t.path / "img");
    bytes.resize(bytes.size() - 10);
    std::ofstream(t.path / "short", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(load_idx(t.path / "short", t.path / "lbl"), doctest::Contains("truncated"), FormatError);

    RawMnist one = r.head(1);
    write_idx(one, t.path / "img1", t.path / "lbl1");
    CHECK_THROWS_WITH_AS(load_idx(t.path / "img", t.path / "lbl1"), doctest::Contains("count mismatch"), FormatError);
    CHECK_THROWS_WITH_AS(load_idx(t.path / "missing", t.path / "lbl"), doctest::Contains("no such file"), FormatError);
}

TEST_CASE("bundled fixture loads with plausible labels") {
    CHECK(fixture_train().size() == 8000);
    CHECK(fixture_test().size() == 2000);
    std::set<int> seen(fixture_train().labels.begin(), fixture_train().labels.end());
    CHECK(seen.size() == 10);
}

TEST_CASE("real MNIST files, when provided, have 60000 training images") {
    const char* dir = std::getenv("CORRSHIFT_MNIST_DIR");
    if (!dir) return;
    const RawMnist r = load_idx(fs::path(dir) / "train-images-idx3-ubyte", fs::path(dir) / "train-labels-idx1-ubyte");
    CHECK(r.size() == 60000);
    const TrainValSplit s = split_trainval(mnist_as_ood(r.head(60000)), 0.9, 1);
    CHECK(s.train.size() == 54000);
    CHECK(s.val.size() == 6000);
}

TEST_CASE("degenerate palette paints exact colors, threshold 150 is foreground") {
    RawMnist r;
    r.labels = {0, 0};
    r.pixels.assign(2 * 784, 0);
    r.pixels[0] = 149;
    r.pixels[1] = 150;
    r.pixels[2] = 255;
    r.pixels[784 + 5] = 200;
    CMnistSpec spec = make_cmnist_spec({}, 1);
    spec.fg_colors[0] = {Rgb{1, 0, 0}, Rgb{1, 0, 0}};
    spec.bg_colors[0] = {Rgb{0, 0, 1}, Rgb{0, 0, 1}};
    spec.noise_std = 0.0;
    const LabeledDataset d = generate_cmnist(r, spec, CMnistMode::trainval);
    CHECK(pixel(d, 0, 0) == Rgb{0, 0, 1});
    CHECK(pixel(d, 0, 1) == Rgb{1, 0, 0});
    CHECK(pixel(d, 0, 2) == Rgb{1, 0, 0});
    CHECK(pixel(d, 1, 5) == Rgb{1, 0, 0});
    CHECK(pixel(d, 1, 6) == Rgb{0, 0, 1});
}

TEST_CASE("each training class shows exactly its two foreground colors") {
    CMnistSpec spec = make_cmnist_spec({});
    spec.noise_std = 0.0;
    const RawMnist raw = fixture_train().head(2000);
    const LabeledDataset d = generate_cmnist(raw, spec, CMnistMode::trainval);
    std::vector<std::set<Rgb>> fg(10), bg(10);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::vector<bool> mask = foreground_mask(raw, i, spec.threshold);
        for (std::size_t k = 0; k < 784; ++k) (mask[k] ? fg : bg)[static_cast<std::size_t>(d.y[i])].insert(pixel(d, i, k));
    }
    for (std::size_t c = 0; c < 10; ++c) {
        CHECK(fg[c] == std::set<Rgb>{as_f32(spec.fg_colors[c][0]), as_f32(spec.fg_colors[c][1])});
        CHECK(bg[c] == std::set<Rgb>{as_f32(spec.bg_colors[c][0]), as_f32(spec.bg_colors[c][1])});
    }
}

TEST_CASE("test mode: colors independent of class, fg differs from bg, no training color reused") {
    for (TestPaletteMode mode : {TestPaletteMode::shared, TestPaletteMode::separate}) {
        CMnistSpec spec = make_cmnist_spec({}, 10, 10, mode);
        spec.noise_std = 0.0;
        const RawMnist raw = fixture_test().head(500);
        const LabeledDataset d = generate_cmnist(raw, spec, CMnistMode::test);
        std::set<Rgb> train_colors;
        for (std::size_t c = 0; c < 10; ++c)
            for (int j = 0; j < 2; ++j) {
                train_colors.insert(as_f32(spec.fg_colors[c][static_cast<std::size_t>(j)]));
                train_colors.insert(as_f32(spec.bg_colors[c][static_cast<std::size_t>(j)]));
            }
        std::set<Rgb> fg_pool;
        for (const Rgb& c : spec.test_palette) fg_pool.insert(as_f32(c));
        std::set<std::pair<int, Rgb>> class_fg;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const std::vector<bool> mask = foreground_mask(raw, i, spec.threshold);
            std::optional<Rgb> f, b;
            for (std::size_t k = 0; k < 784; ++k) (mask[k] ? f : b) = pixel(d, i, k);
            REQUIRE(f.has_value());
            REQUIRE(b.has_value());
            CHECK(fg_pool.count(*f) == 1);
            CHECK(train_colors.count(*f) == 0);
            CHECK(train_colors.count(*b) == 0);
            if (mode == TestPaletteMode::shared) CHECK(*f != *b);
            class_fg.insert({d.y[i], *f});
        }
        // With 500 images, every class sees more than two foreground colors.
        for (int c = 0; c < 10; ++c) {
            std::size_t n = 0;
            for (const auto& [label, color] : class_fg) n += label == c;
            CHECK(n > 2);
        }
    }
}

TEST_CASE("labels preserved, pixels in range, masks independent of color seeds") {
    const RawMnist raw = fixture_train().head(300);
    const LabeledDataset a = generate_cmnist(raw, make_cmnist_spec({1, 2, 3, 4}), CMnistMode::trainval);
    for (std::size_t i = 0; i < raw.size(); ++i) CHECK(a.y[i] == raw.labels[i]);
    for (double v : a.x.data()) CHECK((v >= 0.0 && v <= 1.0));

    CMnistSpec s1 = make_cmnist_spec({5, 6, 7, 8}), s2 = make_cmnist_spec({9, 10, 11, 12});
    s1.noise_std = s2.noise_std = 0.0;
    const LabeledDataset d1 = generate_cmnist(raw, s1, CMnistMode::trainval);
    const LabeledDataset d2 = generate_cmnist(raw, s2, CMnistMode::trainval);
    for (std::size_t i = 0; i < 50; ++i) {
        // Pixel k is foreground iff it matches the image's foreground color.
        const std::size_t first_fg = [&] {
            for (std::size_t k = 0; k < 784; ++k)
                if (raw.pixels[i * 784 + k] >= 150) return k;
            return std::size_t{0};
        }();
        for (std::size_t k = 0; k < 784; ++k)
            CHECK((pixel(d1, i, k) == pixel(d1, i, first_fg)) == (pixel(d2, i, k) == pixel(d2, i, first_fg)));
    }
}

TEST_CASE("split: disjoint, exhaustive, seeded") {
    const LabeledDataset d = mnist_as_ood(fixture_train().head(1000));
    const TrainValSplit a = split_trainval(d, 0.9, 3), b = split_trainval(d, 0.9, 3), c = split_trainval(d, 0.9, 4);
    CHECK(a.train.size() == 900);
    CHECK(a.val.size() == 100);
    std::set<std::size_t> all(a.train_index.begin(), a.train_index.end());
    for (std::size_t i : a.val_index) CHECK(all.insert(i).second);
    CHECK(all.size() == 1000);
    CHECK(a.train_index == b.train_index);
    CHECK(a.train_index != c.train_index);
    CHECK_THROWS_AS(split_trainval(d, 1.0, 1), SpecError);
}

TEST_CASE("plain MNIST as 3-channel OOD set") {
    RawMnist r = tiny();
    std::fill(r.pixels.begin(), r.pixels.begin() + 784, 0);
    const LabeledDataset d = mnist_as_ood(r);
    CHECK(d.x.shape() == Shape{2, 3, 28, 28});
    for (std::size_t k = 0; k < 3 * 784; ++k) CHECK(d.x[k] == 0.0);
    for (std::size_t k = 0; k < 784; ++k) {
        CHECK(d.x[3 * 784 + k] == d.x[4 * 784 + k]);
        CHECK(d.x[3 * 784 + k] == d.x[5 * 784 + k]);
    }
    CHECK(d.x[3 * 784 + 1] == doctest::Approx(((785 * 37) % 256) / 255.0).epsilon(1e-6));
    CHECK(mnist_as_ood(fixture_test()).size() == 2000);
}

TEST_CASE("corpus serialization: byte-identical for one spec, lossless round trip") {
    TempDir t("corpus");
    const CMnistSpec spec = make_cmnist_spec({});
    const RawMnist tr = fixture_train().head(200), te = fixture_test().head(100);
    const CMnistCorpus c1 = build_cmnist_corpus(tr, te, spec), c2 = build_cmnist_corpus(tr, te, spec);
    save_corpus(c1, t.path / "a");
    save_corpus(c2, t.path / "b");
    for (const char* f : {"train_x.bin", "train_y.bin", "val_x.bin", "test_x.bin", "test_y.bin", "manifest.json"})
        CHECK(read_bytes(t.path / "a" / f) == read_bytes(t.path / "b" / f));
    const CMnistCorpus back = load_corpus(t.path / "a");
    CHECK(back.train.x.storage() == c1.train.x.storage());
    CHECK(back.test.y == c1.test.y);
    CHECK(back.val.size() == 20);
    const CMnistSpec spec_back = cmnist_spec_from_json(back.manifest.at("spec"));
    CHECK(spec_back.test_palette == spec.test_palette);
    CHECK(spec_back.seeds.noise == spec.seeds.noise);

    std::ofstream(t.path / "a" / "val_x.bin", std::ios::binary) << "XXXX";
    CHECK_THROWS_WITH_AS(load_corpus(t.path / "a"), doctest::Contains("bad magic"), FormatError);
}

TEST_CASE("spec validation") {
    CMnistSpec s = make_cmnist_spec({});
    s.test_palette.clear();
    CHECK_THROWS_AS(s.validate(), SpecError);
    CMnistSpec sep = make_cmnist_spec({}, 10, 10, TestPaletteMode::separate);
    CHECK(sep.test_bg_palette.size() == 10);
    sep.test_bg_palette.clear();
    CHECK_THROWS_AS(sep.validate(), SpecError);
}
