#pragma once

#include "corrshift/synthetic.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace corrshift {

/// Grayscale digits as stored in IDX files.
struct RawMnist {
    std::size_t rows = 28;
    std::size_t cols = 28;
    std::vector<std::uint8_t> pixels;  // count * rows * cols
    std::vector<std::uint8_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    void validate() const;
    /// First `n` images (all of them when n >= size()).
    RawMnist head(std::size_t n) const;
};

/// Big-endian IDX: images magic 0x00000803, labels magic 0x00000801.
RawMnist load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx(const RawMnist& raw, const std::filesystem::path& images, const std::filesystem::path& labels);

using Rgb = std::array<double, 3>;

enum class TestPaletteMode {
    /// One pool of colors for both foreground and background.
    shared,
    /// Separate foreground and background pools.
    separate,
};

struct CMnistSeeds {
    std::uint64_t palette = 1;
    std::uint64_t assignment = 2;
    std::uint64_t noise = 3;
    std::uint64_t split = 4;
};

struct CMnistSpec {
    /// Per class: two foreground and two background colors.
    std::vector<std::array<Rgb, 2>> fg_colors;
    std::vector<std::array<Rgb, 2>> bg_colors;
    std::vector<Rgb> test_palette;
    /// Background pool in `separate` mode; unused when shared.
    std::vector<Rgb> test_bg_palette;
    TestPaletteMode test_mode = TestPaletteMode::shared;
    /// Pixels >= threshold are foreground.
    std::uint8_t threshold = 150;
    double noise_std = 0.04;
    double train_fraction = 0.9;
    CMnistSeeds seeds;

    std::size_t num_classes() const noexcept { return fg_colors.size(); }
    void validate() const;
};

/// Palettes drawn per channel from U[0, 1] on the palette seed.
CMnistSpec make_cmnist_spec(const CMnistSeeds& seeds, std::size_t num_classes = 10, std::size_t test_colors = 10,
                            TestPaletteMode mode = TestPaletteMode::shared);

enum class CMnistMode { trainval, test };

/// (n, 3, rows, cols) in [0, 1], labels kept in order. Values are rounded to
/// float32 so a saved and reloaded corpus is identical to the in-memory one.
LabeledDataset generate_cmnist(const RawMnist& raw, const CMnistSpec& spec, CMnistMode mode);

/// Boolean foreground mask of one raw image.
std::vector<bool> foreground_mask(const RawMnist& raw, std::size_t index, std::uint8_t threshold);

struct TrainValSplit {
    LabeledDataset train;
    LabeledDataset val;
    std::vector<std::size_t> train_index;
    std::vector<std::size_t> val_index;
};

/// Seeded shuffle; the first round(fraction * n) shuffled rows train.
TrainValSplit split_trainval(const LabeledDataset& data, double fraction, std::uint64_t seed);

/// Grayscale digits replicated to 3 channels and scaled to [0, 1].
LabeledDataset mnist_as_ood(const RawMnist& raw);

struct CMnistCorpus {
    LabeledDataset train;
    LabeledDataset val;
    /// Shifted test set: colors independent of class.
    LabeledDataset test;
    nlohmann::json manifest;
};

/// Train/val from `train_raw` with training palettes, test from `test_raw`
/// with the test palette.
CMnistCorpus build_cmnist_corpus(const RawMnist& train_raw, const RawMnist& test_raw, const CMnistSpec& spec);

nlohmann::json to_json(const CMnistSpec& spec);
CMnistSpec cmnist_spec_from_json(const nlohmann::json& j);

/// Writes {train,val,test}_{x,y}.bin and manifest.json into `dir`.
void save_corpus(const CMnistCorpus& corpus, const std::filesystem::path& dir);
CMnistCorpus load_corpus(const std::filesystem::path& dir);

} // namespace corrshift
