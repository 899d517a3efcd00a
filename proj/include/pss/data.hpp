#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pss/matrix.hpp"

namespace pss {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Provenance { mnist, mnist_variation, synthetic };

std::string to_string(Provenance p);

// Images as rows (28x28 = 784 features for MNIST), class labels 0..9.
struct ImageDataset {
    Matrix images;
    std::vector<int> labels;
    Provenance provenance = Provenance::mnist;
    std::uint64_t noise_seed = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t features() const noexcept { return images.cols(); }
    ImageDataset subset(const std::vector<std::size_t>& indices) const;
};

enum class Split { train, test };

// One-vs-rest binary task: label 1 for the task's class, 0 for the rest.
struct TaskDataset {
    int task = 0;
    Matrix inputs;
    std::vector<double> labels;
    Split split = Split::train;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t positives() const noexcept;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049

// Reads big-endian IDX image/label files; pixels are scaled by 1/255.
ImageDataset load_idx(const std::filesystem::path& image_path,
                      const std::filesystem::path& label_path);

// Writes pixels as round(255 * v); values must lie in [0, 1].
void write_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
               const ImageDataset& dataset, std::size_t rows = 28, std::size_t cols = 28);

// Adds independent N(0, 1) noise to every pixel, unclipped. Each image draws
// from its own generator seeded by (seed, image index).
ImageDataset make_variation(const ImageDataset& clean, std::uint64_t seed);

// FNV-1a over labels and pixel bit patterns.
std::uint64_t dataset_checksum(const ImageDataset& dataset);

// Binary cache for a noisy dataset. Header: "PSSNOIS1", seed, source checksum,
// count, features; then int32 labels and float64 pixels (host byte order).
void save_variation_cache(const std::filesystem::path& path, const ImageDataset& noisy,
                          std::uint64_t source_checksum);
// nullopt when the file is absent or was produced from a different seed/source.
std::optional<ImageDataset> load_variation_cache(const std::filesystem::path& path,
                                                 std::uint64_t seed,
                                                 std::uint64_t source_checksum);

struct StreamOptions {
    std::size_t test_count = 2000;
    double negative_ratio = 1.0;
    // 0 keeps every positive; otherwise a seeded sample of at most this many.
    std::size_t max_positives_per_task = 0;
    bool random_test_subset = false;
    std::uint64_t seed = 1;
};

struct TaskStream {
    std::vector<TaskDataset> train;
    std::vector<TaskDataset> test;
    ImageDataset multiclass_test;

    std::size_t task_count() const noexcept { return train.size(); }
};

// One task per class in ascending class order. Training positives are the
// class's images (optionally subsampled); negatives are drawn uniformly from
// the other classes. The test split is the first `test_count` test images
// (or a seeded random subset) plus balanced per-task binary views of them.
TaskStream build_task_stream(const ImageDataset& train, const ImageDataset& test,
                             const StreamOptions& options);

// Isotropic Gaussian clusters, one per class, centers on a circle of
// radius `separation`.
ImageDataset make_gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t dims,
                                 double separation, double spread, std::uint64_t seed);

}  // namespace pss
