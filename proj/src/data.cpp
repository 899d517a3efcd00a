#include "pss/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

namespace pss {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::ifstream& in, T& v) {
    return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

constexpr char kCacheMagic[8] = {'P', 'S', 'S', 'N', 'O', 'I', 'S', '1'};

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

// Seeded sample of `k` indices from `pool`, returned in ascending order.
std::vector<std::size_t> sample_sorted(std::vector<std::size_t> pool, std::size_t k,
                                       std::mt19937_64& rng) {
    if (k < pool.size()) {
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(k);
    }
    std::sort(pool.begin(), pool.end());
    return pool;
}

TaskDataset make_task(const ImageDataset& source, int task, const std::vector<std::size_t>& pos,
                      const std::vector<std::size_t>& neg, Split split) {
    std::vector<std::size_t> all = pos;
    all.insert(all.end(), neg.begin(), neg.end());
    std::sort(all.begin(), all.end());
    TaskDataset out;
    out.task = task;
    out.split = split;
    out.inputs = source.images.gather_rows(all);
    out.labels.reserve(all.size());
    for (std::size_t idx : all) out.labels.push_back(source.labels[idx] == task ? 1.0 : 0.0);
    return out;
}

}  // namespace

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::mnist: return "mnist";
        case Provenance::mnist_variation: return "mnist_variation";
        case Provenance::synthetic: return "synthetic";
    }
    return "unknown";
}

ImageDataset ImageDataset::subset(const std::vector<std::size_t>& indices) const {
    ImageDataset out;
    out.images = images.gather_rows(indices);
    out.labels.reserve(indices.size());
    for (std::size_t idx : indices) out.labels.push_back(labels.at(idx));
    out.provenance = provenance;
    out.noise_seed = noise_seed;
    return out;
}

std::size_t TaskDataset::positives() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1.0));
}

ImageDataset load_idx(const std::filesystem::path& image_path,
                      const std::filesystem::path& label_path) {
    const auto img = read_file(image_path);
    const auto lab = read_file(label_path);
    if (img.size() < 16) throw DataError(image_path.string() + ": truncated IDX header");
    if (lab.size() < 8) throw DataError(label_path.string() + ": truncated IDX header");
    const std::uint32_t img_magic = read_be32(img, 0);
    const std::uint32_t lab_magic = read_be32(lab, 0);
    if (img_magic != kIdxImageMagic) {
        throw DataError(image_path.string() + ": bad magic " + std::to_string(img_magic) +
                        " (expected 2051)");
    }
    if (lab_magic != kIdxLabelMagic) {
        throw DataError(label_path.string() + ": bad magic " + std::to_string(lab_magic) +
                        " (expected 2049)");
    }
    const std::size_t count = read_be32(img, 4);
    const std::size_t rows = read_be32(img, 8);
    const std::size_t cols = read_be32(img, 12);
    const std::size_t label_count = read_be32(lab, 4);
    if (count != label_count) {
        throw DataError("image count " + std::to_string(count) + " does not match label count " +
                        std::to_string(label_count));
    }
    const std::size_t features = rows * cols;
    if (img.size() < 16 + count * features) throw DataError(image_path.string() + ": truncated pixel data");
    if (lab.size() < 8 + count) throw DataError(label_path.string() + ": truncated label data");

    ImageDataset ds;
    ds.images = Matrix(count, features);
    auto px = ds.images.values();
    for (std::size_t i = 0; i < count * features; ++i) px[i] = static_cast<double>(img[16 + i]) / 255.0;
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) ds.labels[i] = lab[8 + i];
    ds.provenance = Provenance::mnist;
    return ds;
}

void write_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
               const ImageDataset& dataset, std::size_t rows, std::size_t cols) {
    if (rows * cols != dataset.features()) throw DataError("write_idx: rows*cols != feature count");
    std::ofstream img(image_path, std::ios::binary);
    std::ofstream lab(label_path, std::ios::binary);
    if (!img || !lab) throw DataError("write_idx: cannot open output files");
    write_be32(img, kIdxImageMagic);
    write_be32(img, static_cast<std::uint32_t>(dataset.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : dataset.images.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("write_idx: pixel outside [0, 1]");
        img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    write_be32(lab, kIdxLabelMagic);
    write_be32(lab, static_cast<std::uint32_t>(dataset.size()));
    for (int l : dataset.labels) {
        if (l < 0 || l > 255) throw DataError("write_idx: label outside a byte");
        lab.put(static_cast<char>(static_cast<unsigned char>(l)));
    }
    if (!img || !lab) throw DataError("write_idx: write failed");
}

ImageDataset make_variation(const ImageDataset& clean, std::uint64_t seed) {
    ImageDataset noisy = clean;
    noisy.provenance = Provenance::mnist_variation;
    noisy.noise_seed = seed;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        auto rng = derived_rng(seed, i, 0x6e6f697365ULL);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& px : noisy.images.row(i)) px += normal(rng);
    }
    return noisy;
}

std::uint64_t dataset_checksum(const ImageDataset& dataset) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (int l : dataset.labels) mix(&l, sizeof l);
    const auto v = dataset.images.values();
    mix(v.data(), v.size() * sizeof(double));
    return h;
}

void save_variation_cache(const std::filesystem::path& path, const ImageDataset& noisy,
                          std::uint64_t source_checksum) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write cache " + path.string());
    out.write(kCacheMagic, sizeof kCacheMagic);
    put(out, noisy.noise_seed);
    put(out, source_checksum);
    put(out, static_cast<std::uint64_t>(noisy.size()));
    put(out, static_cast<std::uint64_t>(noisy.features()));
    for (int l : noisy.labels) put(out, static_cast<std::int32_t>(l));
    const auto v = noisy.images.values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!out) throw DataError("cache write failed: " + path.string());
}

std::optional<ImageDataset> load_variation_cache(const std::filesystem::path& path,
                                                 std::uint64_t seed,
                                                 std::uint64_t source_checksum) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[8];
    std::uint64_t file_seed = 0, file_sum = 0, count = 0, features = 0;
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) {
        throw DataError(path.string() + ": not a noise cache file");
    }
    if (!get(in, file_seed) || !get(in, file_sum) || !get(in, count) || !get(in, features)) {
        throw DataError(path.string() + ": truncated cache header");
    }
    if (file_seed != seed || file_sum != source_checksum) return std::nullopt;
    ImageDataset ds;
    ds.provenance = Provenance::mnist_variation;
    ds.noise_seed = seed;
    ds.labels.resize(count);
    for (auto& l : ds.labels) {
        std::int32_t v = 0;
        if (!get(in, v)) throw DataError(path.string() + ": truncated cache labels");
        l = v;
    }
    ds.images = Matrix(count, features);
    auto px = ds.images.values();
    if (!in.read(reinterpret_cast<char*>(px.data()),
                 static_cast<std::streamsize>(px.size() * sizeof(double)))) {
        throw DataError(path.string() + ": truncated cache pixels");
    }
    return ds;
}

TaskStream build_task_stream(const ImageDataset& train, const ImageDataset& test,
                             const StreamOptions& options) {
    if (!(options.negative_ratio > 0.0)) {
        throw DataError("negative_ratio must be > 0 (each task needs negative examples)");
    }
    if (train.size() == 0) throw DataError("empty training set");
    if (options.test_count == 0) throw DataError("test_count must be >= 1");
    if (options.test_count > test.size()) {
        throw DataError("requested " + std::to_string(options.test_count) + " test images, only " +
                        std::to_string(test.size()) + " available");
    }
    if (train.features() != test.features()) throw DataError("train/test feature counts differ");

    const int classes = *std::max_element(train.labels.begin(), train.labels.end()) + 1;
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.labels[i] < 0) throw DataError("negative class label");
        by_class[static_cast<std::size_t>(train.labels[i])].push_back(i);
    }

    TaskStream stream;
    std::vector<std::size_t> test_idx(test.size());
    std::iota(test_idx.begin(), test_idx.end(), 0);
    if (options.random_test_subset) {
        auto rng = derived_rng(options.seed, 0, 0x74657374ULL);
        test_idx = sample_sorted(test_idx, options.test_count, rng);
    } else {
        test_idx.resize(options.test_count);
    }
    stream.multiclass_test = test.subset(test_idx);
    const ImageDataset& mtest = stream.multiclass_test;

    for (int c = 0; c < classes; ++c) {
        const auto& positives_all = by_class[static_cast<std::size_t>(c)];
        if (positives_all.empty()) throw DataError("class " + std::to_string(c) + " has no training images");

        auto rng = derived_rng(options.seed, static_cast<std::uint64_t>(c), 0x747261696eULL);
        std::vector<std::size_t> pos = positives_all;
        if (options.max_positives_per_task > 0) pos = sample_sorted(pos, options.max_positives_per_task, rng);

        std::vector<std::size_t> others;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (train.labels[i] != c) others.push_back(i);
        }
        if (others.empty()) throw DataError("no negative examples for class " + std::to_string(c));
        const auto want = static_cast<std::size_t>(
            std::max(1.0, std::round(options.negative_ratio * static_cast<double>(pos.size()))));
        const auto neg = sample_sorted(others, want, rng);
        stream.train.push_back(make_task(train, c, pos, neg, Split::train));

        std::vector<std::size_t> tpos, tother;
        for (std::size_t i = 0; i < mtest.size(); ++i) {
            (mtest.labels[i] == c ? tpos : tother).push_back(i);
        }
        if (tpos.empty()) throw DataError("class " + std::to_string(c) + " has no test images");
        if (tother.empty()) throw DataError("no negative test examples for class " + std::to_string(c));
        auto trng = derived_rng(options.seed, static_cast<std::uint64_t>(c), 0x6576616cULL);
        const auto twant = static_cast<std::size_t>(
            std::max(1.0, std::round(options.negative_ratio * static_cast<double>(tpos.size()))));
        const auto tneg = sample_sorted(tother, twant, trng);
        stream.test.push_back(make_task(mtest, c, tpos, tneg, Split::test));
    }
    return stream;
}

ImageDataset make_gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t dims,
                                 double separation, double spread, std::uint64_t seed) {
    if (classes == 0 || per_class == 0 || dims == 0) throw DataError("blobs need classes, points and dims");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, spread);
    ImageDataset ds;
    ds.provenance = Provenance::synthetic;
    ds.images = Matrix(classes * per_class, dims);
    ds.labels.resize(classes * per_class);
    for (std::size_t c = 0; c < classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        std::vector<double> center(dims, 0.0);
        center[0] = separation * std::cos(angle);
        if (dims > 1) center[1] = separation * std::sin(angle);
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t row = c * per_class + i;
            for (std::size_t d = 0; d < dims; ++d) ds.images(row, d) = center[d] + normal(rng);
            ds.labels[row] = static_cast<int>(c);
        }
    }
    return ds;
}

}  // namespace pss
