#include "corrshift/cmnist.hpp"

#include "corrshift/error.hpp"
#include "corrshift/rng.hpp"
#include "corrshift/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace corrshift {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(const std::vector<char>& bytes, std::size_t offset, const std::filesystem::path& path) {
    if (bytes.size() < offset + 4) throw FormatError(path.string() + ": truncated IDX header");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes[offset + i]);
    return v;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

std::vector<char> slurp(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingDataError(path.string() + ": no such file");
    return read_bytes(path);
}

void check_size(const std::vector<char>& bytes, std::size_t expected, const std::filesystem::path& path) {
    if (bytes.size() < expected)
        throw FormatError(path.string() + ": truncated IDX data (" + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected) + ")");
    if (bytes.size() > expected) throw FormatError(path.string() + ": trailing bytes after IDX data");
}

} // namespace

void RawMnist::validate() const {
    if (rows == 0 || cols == 0) throw FormatError("RawMnist: zero image dimension");
    if (pixels.size() != labels.size() * rows * cols)
        throw FormatError("RawMnist: pixel buffer does not match " + std::to_string(labels.size()) + " images of " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    for (std::uint8_t l : labels)
        if (l > 9) throw FormatError("RawMnist: label " + std::to_string(l) + " outside [0, 9]");
}

RawMnist RawMnist::head(std::size_t n) const {
    n = std::min(n, size());
    RawMnist out;
    out.rows = rows;
    out.cols = cols;
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    out.pixels.assign(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(n * rows * cols));
    return out;
}

RawMnist load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const std::vector<char> ib = slurp(images), lb = slurp(labels);
    const std::uint32_t im = read_be32(ib, 0, images);
    if (im != kImageMagic) throw FormatError(images.string() + ": bad magic for IDX images");
    const std::uint32_t lm = read_be32(lb, 0, labels);
    if (lm != kLabelMagic) throw FormatError(labels.string() + ": bad magic for IDX labels");

    RawMnist raw;
    const std::size_t n = read_be32(ib, 4, images);
    raw.rows = read_be32(ib, 8, images);
    raw.cols = read_be32(ib, 12, images);
    if (raw.rows != 28 || raw.cols != 28)
        throw FormatError(images.string() + ": expected 28x28 images, got " + std::to_string(raw.rows) + "x" +
                          std::to_string(raw.cols));
    const std::size_t nl = read_be32(lb, 4, labels);
    if (n != nl)
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
    check_size(ib, 16 + n * raw.rows * raw.cols, images);
    check_size(lb, 8 + n, labels);
    raw.pixels.assign(ib.begin() + 16, ib.end());
    raw.labels.assign(lb.begin() + 8, lb.end());
    raw.validate();
    return raw;
}

void write_idx(const RawMnist& raw, const std::filesystem::path& images, const std::filesystem::path& labels) {
    raw.validate();
    std::ofstream io(images, std::ios::binary | std::ios::trunc), lo(labels, std::ios::binary | std::ios::trunc);
    if (!io || !lo) throw FormatError("write_idx: cannot open output files");
    put_be32(io, kImageMagic);
    put_be32(io, static_cast<std::uint32_t>(raw.size()));
    put_be32(io, static_cast<std::uint32_t>(raw.rows));
    put_be32(io, static_cast<std::uint32_t>(raw.cols));
    io.write(reinterpret_cast<const char*>(raw.pixels.data()), static_cast<std::streamsize>(raw.pixels.size()));
    put_be32(lo, kLabelMagic);
    put_be32(lo, static_cast<std::uint32_t>(raw.size()));
    lo.write(reinterpret_cast<const char*>(raw.labels.data()), static_cast<std::streamsize>(raw.labels.size()));
    if (!io || !lo) throw FormatError("write_idx: write failed");
}

void CMnistSpec::validate() const {
    if (fg_colors.empty() || bg_colors.size() != fg_colors.size())
        throw SpecError("CMnistSpec: need two fg and two bg colors for every class");
    if (test_palette.empty()) throw SpecError("CMnistSpec: empty test palette");
    if (test_mode == TestPaletteMode::shared && test_palette.size() < 2)
        throw SpecError("CMnistSpec: a shared test palette needs at least 2 colors so fg != bg");
    if (test_mode == TestPaletteMode::separate && test_bg_palette.empty())
        throw SpecError("CMnistSpec: empty test background palette");
    const auto check = [](const Rgb& c) {
        for (double v : c)
            if (!(v >= 0.0 && v <= 1.0)) throw SpecError("CMnistSpec: color channel outside [0, 1]");
    };
    for (const auto& pair : fg_colors) for (const Rgb& c : pair) check(c);
    for (const auto& pair : bg_colors) for (const Rgb& c : pair) check(c);
    for (const Rgb& c : test_palette) check(c);
    for (const Rgb& c : test_bg_palette) check(c);
    if (!(noise_std >= 0.0)) throw SpecError("CMnistSpec: noise_std must be non-negative");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw SpecError("CMnistSpec: train fraction must be in (0, 1)");
}

CMnistSpec make_cmnist_spec(const CMnistSeeds& seeds, std::size_t num_classes, std::size_t test_colors,
                            TestPaletteMode mode) {
    CMnistSpec spec;
    spec.seeds = seeds;
    spec.test_mode = mode;
    CounterRng train_rng(seeds.palette, 0), test_rng(seeds.palette, 1), test_bg_rng(seeds.palette, 2);
    const auto color = [](CounterRng& r) { return Rgb{r.uniform(), r.uniform(), r.uniform()}; };
    for (std::size_t c = 0; c < num_classes; ++c) {
        spec.fg_colors.push_back({color(train_rng), color(train_rng)});
        spec.bg_colors.push_back({color(train_rng), color(train_rng)});
    }
    for (std::size_t i = 0; i < test_colors; ++i) spec.test_palette.push_back(color(test_rng));
    if (mode == TestPaletteMode::separate)
        for (std::size_t i = 0; i < test_colors; ++i) spec.test_bg_palette.push_back(color(test_bg_rng));
    return spec;
}

std::vector<bool> foreground_mask(const RawMnist& raw, std::size_t index, std::uint8_t threshold) {
    const std::size_t hw = raw.rows * raw.cols;
    std::vector<bool> mask(hw);
    for (std::size_t k = 0; k < hw; ++k) mask[k] = raw.pixels[index * hw + k] >= threshold;
    return mask;
}

LabeledDataset generate_cmnist(const RawMnist& raw, const CMnistSpec& spec, CMnistMode mode) {
    raw.validate();
    spec.validate();
    const std::size_t n = raw.size(), hw = raw.rows * raw.cols;
    for (std::uint8_t l : raw.labels)
        if (l >= spec.num_classes())
            throw SpecError("generate_cmnist: label " + std::to_string(l) + " has no palette");
    LabeledDataset out{Tensor(Shape{n, 3, raw.rows, raw.cols}), std::vector<int>(n)};
    // Test-mode images use a disjoint key range so the two modes never share streams.
    const std::uint64_t key_base = mode == CMnistMode::test ? (std::uint64_t{1} << 40) : 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = raw.labels[i];
        out.y[i] = label;
        CounterRng pick(spec.seeds.assignment, key_base + i);
        Rgb fg, bg;
        if (mode == CMnistMode::trainval) {
            fg = spec.fg_colors[static_cast<std::size_t>(label)][pick.below(2)];
            bg = spec.bg_colors[static_cast<std::size_t>(label)][pick.below(2)];
        } else if (spec.test_mode == TestPaletteMode::shared) {
            const std::size_t m = spec.test_palette.size();
            const std::size_t f = pick.below(m);
            std::size_t b = pick.below(m - 1);
            if (b >= f) ++b;
            fg = spec.test_palette[f];
            bg = spec.test_palette[b];
        } else {
            fg = spec.test_palette[pick.below(spec.test_palette.size())];
            bg = spec.test_bg_palette[pick.below(spec.test_bg_palette.size())];
        }
        CounterRng noise(spec.seeds.noise, key_base + i);
        double* img = out.x.data().data() + i * 3 * hw;
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t k = 0; k < hw; ++k) {
                const bool on = raw.pixels[i * hw + k] >= spec.threshold;
                double v = on ? fg[ch] : bg[ch];
                if (spec.noise_std > 0.0) v += spec.noise_std * noise.normal();
                img[ch * hw + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    }
    return out;
}

TrainValSplit split_trainval(const LabeledDataset& data, double fraction, std::uint64_t seed) {
    data.validate();
    if (!(fraction > 0.0 && fraction < 1.0)) throw SpecError("split_trainval: fraction must be in (0, 1)");
    CounterRng rng(seed, 0x5b17);
    const std::vector<std::size_t> perm = permutation(data.size(), rng);
    const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
    TrainValSplit s;
    s.train_index.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cut));
    s.val_index.assign(perm.begin() + static_cast<std::ptrdiff_t>(cut), perm.end());
    s.train = data.subset(s.train_index);
    s.val = data.subset(s.val_index);
    return s;
}

LabeledDataset mnist_as_ood(const RawMnist& raw) {
    raw.validate();
    const std::size_t n = raw.size(), hw = raw.rows * raw.cols;
    LabeledDataset out{Tensor(Shape{n, 3, raw.rows, raw.cols}), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        out.y[i] = raw.labels[i];
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t k = 0; k < hw; ++k)
                out.x[(i * 3 + ch) * hw + k] = static_cast<float>(raw.pixels[i * hw + k] / 255.0);
    }
    return out;
}

nlohmann::json to_json(const CMnistSpec& spec) {
    using nlohmann::json;
    json j;
    j["fg_colors"] = spec.fg_colors;
    j["bg_colors"] = spec.bg_colors;
    j["test_palette"] = spec.test_palette;
    j["test_bg_palette"] = spec.test_bg_palette;
    j["test_mode"] = spec.test_mode == TestPaletteMode::shared ? "shared" : "separate";
    j["threshold"] = spec.threshold;
    j["noise_std"] = spec.noise_std;
    j["train_fraction"] = spec.train_fraction;
    j["seeds"] = {{"palette", spec.seeds.palette},
                  {"assignment", spec.seeds.assignment},
                  {"noise", spec.seeds.noise},
                  {"split", spec.seeds.split}};
    return j;
}

CMnistSpec cmnist_spec_from_json(const nlohmann::json& j) {
    try {
        CMnistSpec s;
        s.fg_colors = j.at("fg_colors").get<std::vector<std::array<Rgb, 2>>>();
        s.bg_colors = j.at("bg_colors").get<std::vector<std::array<Rgb, 2>>>();
        s.test_palette = j.at("test_palette").get<std::vector<Rgb>>();
        s.test_bg_palette = j.at("test_bg_palette").get<std::vector<Rgb>>();
        const std::string mode = j.at("test_mode").get<std::string>();
        if (mode != "shared" && mode != "separate") throw FormatError("CMnistSpec: unknown test_mode '" + mode + "'");
        s.test_mode = mode == "shared" ? TestPaletteMode::shared : TestPaletteMode::separate;
        s.threshold = j.at("threshold").get<std::uint8_t>();
        s.noise_std = j.at("noise_std").get<double>();
        s.train_fraction = j.at("train_fraction").get<double>();
        const auto& seeds = j.at("seeds");
        s.seeds = {seeds.at("palette").get<std::uint64_t>(), seeds.at("assignment").get<std::uint64_t>(),
                   seeds.at("noise").get<std::uint64_t>(), seeds.at("split").get<std::uint64_t>()};
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("CMnistSpec: ") + e.what());
    }
}

CMnistCorpus build_cmnist_corpus(const RawMnist& train_raw, const RawMnist& test_raw, const CMnistSpec& spec) {
    TrainValSplit s = split_trainval(generate_cmnist(train_raw, spec, CMnistMode::trainval), spec.train_fraction,
                                     spec.seeds.split);
    CMnistCorpus c;
    c.train = std::move(s.train);
    c.val = std::move(s.val);
    c.test = generate_cmnist(test_raw, spec, CMnistMode::test);
    c.manifest = {{"format", "corrshift-cmnist"},
                  {"version", 1},
                  {"spec", to_json(spec)},
                  {"sizes", {{"train", c.train.size()}, {"val", c.val.size()}, {"test", c.test.size()}}},
                  {"shape", {3, train_raw.rows, train_raw.cols}},
                  {"dtype", "f32"}};
    return c;
}

void save_corpus(const CMnistCorpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::pair<const char*, const LabeledDataset*> parts[] = {
        {"train", &corpus.train}, {"val", &corpus.val}, {"test", &corpus.test}};
    for (const auto& [name, data] : parts) {
        write_tensor(dir / (std::string(name) + "_x.bin"), data->x, DType::f32);
        write_labels(dir / (std::string(name) + "_y.bin"), data->y);
    }
    std::ofstream m(dir / "manifest.json", std::ios::trunc);
    if (!m) throw FormatError("cannot write " + (dir / "manifest.json").string());
    m << corpus.manifest.dump(2) << '\n';
}

CMnistCorpus load_corpus(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw MissingDataError(manifest_path.string() + ": no such file");
    CMnistCorpus c;
    std::ifstream m(manifest_path);
    try {
        c.manifest = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    const std::pair<const char*, LabeledDataset*> parts[] = {{"train", &c.train}, {"val", &c.val}, {"test", &c.test}};
    for (const auto& [name, data] : parts) {
        data->x = read_tensor(dir / (std::string(name) + "_x.bin"));
        data->y = read_labels(dir / (std::string(name) + "_y.bin"));
        data->validate();
    }
    return c;
}

} // namespace corrshift
