#include "spcnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "binary_io.hpp"
#include "spcnn/errors.hpp"
#include "spcnn/rng.hpp"

namespace spcnn {

namespace {

constexpr double kQuantum = 1024.0;
constexpr std::size_t kSide = kPatchSize;

// Generation streams; each patch gets its own derived seed so rendering is
// independent of generation order.
enum Stream : std::uint64_t { kLabeledStream = 1, kPoolStream = 2, kBenchmarkStream = 3, kPoolLabelStream = 4 };

std::uint64_t patch_seed(std::uint64_t seed, Stream stream, std::uint64_t index) {
    return derive_seed(derive_seed(seed, stream), index);
}

std::uint64_t poisson(Rng& rng, double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    std::uint64_t k = 0;
    double prod = rng.uniform();
    while (prod > limit) {
        ++k;
        prod *= rng.uniform();
    }
    return k;
}

using Plane = std::array<double, kSide * kSide>;

// Soft disc coverage in [0,1] with a one-pixel anti-aliased edge.
double coverage(double dist, double radius) { return std::clamp(radius + 0.5 - dist, 0.0, 1.0); }

void stamp_disc(Plane& p, double cx, double cy, double radius, double delta) {
    for (std::size_t y = 0; y < kSide; ++y) {
        for (std::size_t x = 0; x < kSide; ++x) {
            const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
            const double w = coverage(d, radius);
            if (w > 0.0) p[y * kSide + x] += w * delta;
        }
    }
}

Plane airway_texture(const ClassTexture& t, Rng& rng) {
    Plane p;
    p.fill(t.base_intensity);
    const std::uint64_t n = 1 + poisson(rng, std::max(0.0, t.blob_density - 1.0));
    for (std::uint64_t i = 0; i < n; ++i) {
        const double r = rng.uniform(t.blob_radius_min, t.blob_radius_max);
        const double cx = rng.uniform(8.0, kSide - 8.0);
        const double cy = rng.uniform(8.0, kSide - 8.0);
        const double wall = 2.0;
        for (std::size_t y = 0; y < kSide; ++y) {
            for (std::size_t x = 0; x < kSide; ++x) {
                const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
                const double lumen = coverage(d, r);
                const double ring = coverage(d, r + wall) - lumen;
                p[y * kSide + x] += lumen * t.blob_contrast - 0.5 * ring * t.blob_contrast;
            }
        }
    }
    return p;
}

Plane emphysema_texture(const ClassTexture& t, Rng& rng) {
    Plane p;
    p.fill(t.base_intensity);
    Plane holes{};
    const std::uint64_t n = poisson(rng, t.blob_density);
    for (std::uint64_t i = 0; i < n; ++i) {
        const double r = rng.uniform(t.blob_radius_min, t.blob_radius_max);
        const double cx = rng.uniform(0.0, kSide - 1.0);
        const double cy = rng.uniform(0.0, kSide - 1.0);
        for (std::size_t y = 0; y < kSide; ++y) {
            for (std::size_t x = 0; x < kSide; ++x) {
                const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
                holes[y * kSide + x] = std::max(holes[y * kSide + x], coverage(d, r));
            }
        }
    }
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += holes[i] * t.blob_contrast;
    return p;
}

Plane tissue_texture(const ClassTexture& t, Rng& rng) {
    Plane p;
    p.fill(t.base_intensity);
    const std::uint64_t n = poisson(rng, t.blob_density);
    for (std::uint64_t i = 0; i < n; ++i) {
        const double r = rng.uniform(t.blob_radius_min, t.blob_radius_max);
        const double cx = rng.uniform(0.0, kSide - 1.0);
        const double cy = rng.uniform(0.0, kSide - 1.0);
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        stamp_disc(p, cx, cy, r, sign * t.blob_contrast);
    }
    return p;
}

Plane class_texture(const SyntheticSpec& spec, int label, Rng& rng) {
    const ClassTexture& t = spec.classes[static_cast<std::size_t>(label)];
    switch (label) {
        case 0: return airway_texture(t, rng);
        case 1: return emphysema_texture(t, rng);
        default: return tissue_texture(t, rng);
    }
}

// Replaces the part of `p` beyond a random straight boundary, covering
// `fraction` of the pixels, with `other`.
void blend_region(Plane& p, const Plane& other, double fraction, Rng& rng) {
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ux = std::cos(angle), uy = std::sin(angle);
    std::array<std::pair<double, std::size_t>, kSide * kSide> proj;
    for (std::size_t y = 0; y < kSide; ++y) {
        for (std::size_t x = 0; x < kSide; ++x) {
            const std::size_t i = y * kSide + x;
            proj[i] = {ux * static_cast<double>(x) + uy * static_cast<double>(y), i};
        }
    }
    std::sort(proj.begin(), proj.end());
    const auto take = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(proj.size())));
    for (std::size_t k = proj.size() - take; k < proj.size(); ++k) p[proj[k].second] = other[proj[k].second];
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * kQuantum) / kQuantum; }

}  // namespace

std::array<ClassTexture, kNumClasses> SyntheticSpec::default_textures() {
    ClassTexture airway{.base_intensity = 0.52,
                        .blob_density = 1.0,
                        .blob_radius_min = 4.0,
                        .blob_radius_max = 6.0,
                        .blob_contrast = -0.40,
                        .noise_sigma = 0.08};
    ClassTexture emphysema{.base_intensity = 0.32,
                           .blob_density = 7.0,
                           .blob_radius_min = 1.5,
                           .blob_radius_max = 4.5,
                           .blob_contrast = -0.20,
                           .noise_sigma = 0.08};
    ClassTexture tissue{.base_intensity = 0.72,
                        .blob_density = 28.0,
                        .blob_radius_min = 0.8,
                        .blob_radius_max = 2.0,
                        .blob_contrast = 0.14,
                        .noise_sigma = 0.08};
    return {airway, emphysema, tissue};
}

void SyntheticSpec::set_noise_sigma(double sigma) {
    for (auto& c : classes) c.noise_sigma = sigma;
}

void SyntheticSpec::validate() const {
    for (const auto& c : classes) {
        if (!(c.noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be >= 0");
        if (!(c.blob_radius_min > 0.0 && c.blob_radius_max >= c.blob_radius_min)) {
            throw ParameterError("blob radius range must satisfy 0 < min <= max");
        }
        if (!(c.blob_density >= 0.0)) throw ParameterError("blob_density must be >= 0");
        if (!(c.base_intensity >= 0.0 && c.base_intensity <= 1.0)) {
            throw ParameterError("base_intensity must lie in [0, 1]");
        }
    }
    if (!(boundary_fraction >= 0.0 && boundary_fraction <= 1.0)) {
        throw ParameterError("boundary_fraction must lie in [0, 1]");
    }
    if (!(brightness_jitter >= 0.0)) throw ParameterError("brightness_jitter must be >= 0");
    double total = 0.0;
    for (double p : pool_proportions) {
        if (!(p >= 0.0)) throw ParameterError("pool proportions must be >= 0");
        total += p;
    }
    if (pool_size > 0 && !(total > 0.0)) throw ParameterError("pool proportions must not all be zero");
}

Tensor render_patch(const SyntheticSpec& spec, int label, std::uint64_t seed) {
    if (label < 0 || label >= kNumClasses) throw IndexError("class label out of range");
    Rng rng(seed);
    Plane p = class_texture(spec, label, rng);
    if (rng.bernoulli(spec.boundary_fraction)) {
        const int other = (label + 1 + static_cast<int>(rng.below(2))) % kNumClasses;
        const Plane q = class_texture(spec, other, rng);
        blend_region(p, q, rng.uniform(0.1, 0.3), rng);
    }
    const double sigma = spec.classes[static_cast<std::size_t>(label)].noise_sigma;
    const double offset = sigma > 0.0 ? rng.normal() * sigma * spec.brightness_jitter : 0.0;
    Tensor out({kPatchChannels, kSide, kSide});
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double noise = sigma > 0.0 ? rng.normal() * sigma : 0.0;
        out[i] = quantize(p[i] + offset + noise);
    }
    return out;
}

int PoolTruth::label_of(std::int64_t patch_id) const {
    if (patch_id < 0 || static_cast<std::size_t>(patch_id) >= labels.size()) {
        throw IndexError("unknown pool patch_id " + std::to_string(patch_id));
    }
    return labels[static_cast<std::size_t>(patch_id)];
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData data;
    std::int64_t next_id = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        for (std::size_t i = 0; i < spec.labeled_per_class; ++i) {
            const auto index = static_cast<std::uint64_t>(c) * spec.labeled_per_class + i;
            data.labeled.push_back(
                {render_patch(spec, c, patch_seed(spec.seed, kLabeledStream, index)), c, Origin::Manual, next_id++});
        }
    }
    next_id = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        for (std::size_t i = 0; i < spec.benchmark_per_class; ++i) {
            const auto index = static_cast<std::uint64_t>(c) * spec.benchmark_per_class + i;
            data.benchmark.push_back(
                {render_patch(spec, c, patch_seed(spec.seed, kBenchmarkStream, index)), c, Origin::Manual, next_id++});
        }
    }
    const double total = std::accumulate(spec.pool_proportions.begin(), spec.pool_proportions.end(), 0.0);
    Rng label_rng(derive_seed(spec.seed, kPoolLabelStream));
    for (std::size_t i = 0; i < spec.pool_size; ++i) {
        double u = label_rng.uniform() * total;
        int label = kNumClasses - 1;
        for (int c = 0; c < kNumClasses; ++c) {
            if (u < spec.pool_proportions[static_cast<std::size_t>(c)]) {
                label = c;
                break;
            }
            u -= spec.pool_proportions[static_cast<std::size_t>(c)];
        }
        data.pool.push_back({render_patch(spec, label, patch_seed(spec.seed, kPoolStream, i)),
                             static_cast<std::int64_t>(i)});
        data.pool_truth.labels.push_back(label);
    }
    return data;
}

void SplitSpec::validate() const {
    if (train_per_class < 1 || verify_per_class < 1) {
        throw ParameterError("split counts must be >= 1 per class");
    }
}

std::array<std::size_t, kNumClasses> class_counts(std::span<const LabeledPatch> data) {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& p : data) {
        if (p.label < 0 || p.label >= kNumClasses) throw DataError("label out of range: " + std::to_string(p.label));
        ++counts[static_cast<std::size_t>(p.label)];
    }
    return counts;
}

Split split(std::span<const LabeledPatch> data, const SplitSpec& spec) {
    spec.validate();
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int label = data[i].label;
        if (label < 0 || label >= kNumClasses) throw DataError("label out of range: " + std::to_string(label));
        by_class[static_cast<std::size_t>(label)].push_back(i);
    }
    Split out;
    Rng rng(derive_seed(spec.seed, 0x5911));
    for (int c = 0; c < kNumClasses; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        const std::size_t need = spec.train_per_class + spec.verify_per_class;
        if (idx.size() < need) {
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                            " patches, split needs " + std::to_string(need));
        }
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t k = 0; k < spec.train_per_class; ++k) out.train.push_back(data[idx[k]]);
        for (std::size_t k = spec.train_per_class; k < need; ++k) out.verify.push_back(data[idx[k]]);
    }
    return out;
}

std::string encode_patches(const PatchFile& file) {
    detail::ByteWriter w;
    w.bytes("SPCN");
    w.u32(kPatchFileVersion);
    w.u32(static_cast<std::uint32_t>(file.height));
    w.u32(static_cast<std::uint32_t>(file.width));
    w.u32(static_cast<std::uint32_t>(file.channels));
    w.u32(static_cast<std::uint32_t>(file.pixels.size()));
    w.u8(file.labels ? 1 : 0);
    if (file.labels && file.labels->size() != file.pixels.size()) {
        throw DataError("label count does not match patch count");
    }
    const Shape expected{file.channels, file.height, file.width};
    for (std::size_t i = 0; i < file.pixels.size(); ++i) {
        require_shape(file.pixels[i], expected, "patch");
        if (file.labels) w.u8(static_cast<std::uint8_t>((*file.labels)[i]));
        for (double v : file.pixels[i].data()) w.f32(static_cast<float>(v));
    }
    return w.buffer();
}

PatchFile decode_patches(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (r.bytes(4, "magic") != "SPCN") throw FormatError("bad patch file magic", 0);
    const std::uint64_t version_at = r.offset();
    if (r.u32("version") != kPatchFileVersion) throw FormatError("unsupported patch file version", version_at);
    PatchFile file;
    const std::uint64_t dims_at = r.offset();
    file.height = r.u32("height");
    file.width = r.u32("width");
    file.channels = r.u32("channels");
    if (file.height == 0 || file.width == 0 || file.channels == 0) throw FormatError("zero patch dimension", dims_at);
    const std::uint32_t count = r.u32("count");
    const std::uint64_t flag_at = r.offset();
    const std::uint8_t labels_present = r.u8("labels_present");
    if (labels_present > 1) throw FormatError("labels_present must be 0 or 1", flag_at);

    const std::uint64_t plane = std::uint64_t{file.height} * file.width * file.channels;
    const std::uint64_t record = plane * 4 + labels_present;
    if (r.remaining() != record * count) {
        const std::uint64_t whole = r.remaining() / record;
        if (r.remaining() < record * count) {
            throw FormatError("payload holds " + std::to_string(whole) + " complete records, header declares " +
                                  std::to_string(count),
                              r.offset() + whole * record);
        }
        throw FormatError("trailing bytes after " + std::to_string(count) + " records", r.offset() + record * count);
    }
    if (labels_present) file.labels.emplace();
    file.pixels.reserve(count);
    const Shape shape{file.channels, file.height, file.width};
    for (std::uint32_t i = 0; i < count; ++i) {
        if (labels_present) {
            const std::uint64_t at = r.offset();
            const std::uint8_t label = r.u8("label");
            if (label >= kNumClasses) throw FormatError("label out of range", at);
            file.labels->push_back(label);
        }
        std::vector<double> px(plane);
        for (auto& v : px) {
            const std::uint64_t at = r.offset();
            v = static_cast<double>(r.f32("pixel"));
            if (!(v >= 0.0 && v <= 1.0)) throw FormatError("pixel value outside [0,1]", at);
        }
        file.pixels.emplace_back(shape, std::move(px));
    }
    return file;
}

void save_labeled(const std::string& path, std::span<const LabeledPatch> patches) {
    PatchFile file;
    file.labels.emplace();
    for (const auto& p : patches) {
        file.pixels.push_back(p.pixels);
        file.labels->push_back(p.label);
    }
    detail::write_file(path, encode_patches(file));
}

void save_unlabeled(const std::string& path, const UnlabeledPool& pool) {
    PatchFile file;
    for (const auto& p : pool) file.pixels.push_back(p.pixels);
    detail::write_file(path, encode_patches(file));
}

PatchFile load_patches(const std::string& path) { return decode_patches(detail::read_file(path)); }

LabeledSet load_labeled(const std::string& path, Origin origin) {
    PatchFile file = load_patches(path);
    if (!file.labels) throw DataError(path + " carries no labels");
    LabeledSet out;
    for (std::size_t i = 0; i < file.pixels.size(); ++i) {
        out.push_back({std::move(file.pixels[i]), (*file.labels)[i], origin, static_cast<std::int64_t>(i)});
    }
    return out;
}

UnlabeledPool load_unlabeled(const std::string& path) {
    PatchFile file = load_patches(path);
    UnlabeledPool pool;
    for (std::size_t i = 0; i < file.pixels.size(); ++i) {
        pool.push_back({std::move(file.pixels[i]), static_cast<std::int64_t>(i)});
    }
    return pool;
}

}  // namespace spcnn
