#include <algorithm>
#include <cmath>

#include "msfpt/data.hpp"
#include "msfpt/rng.hpp"

namespace msfpt {

namespace {

// Separable Gaussian blur of each h x w plane with clamped edges.
void blur_planes(std::vector<double>& v, std::size_t planes, std::size_t h, std::size_t w, double sigma) {
    if (sigma <= 0.0) return;
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double total = 0.0;
    for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& x : k) x /= total;
    std::vector<double> tmp(h * w);
    const auto clampi = [](long i, std::size_t n) { return static_cast<std::size_t>(std::clamp(i, 0L, long(n) - 1)); };
    for (std::size_t p = 0; p < planes; ++p) {
        double* plane = v.data() + p * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * plane[y * w + clampi(long(x) + i, w)];
                tmp[y * w + x] = s;
            }
        }
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[clampi(long(y) + i, h) * w + x];
                plane[y * w + x] = s;
            }
        }
    }
}

TensorF quantized(const std::vector<double>& v, std::size_t size) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0)) / 255.0f;
    }
    return TensorF({3, size, size}, std::move(out));
}

}  // namespace

std::vector<SyntheticPair> make_synthetic(std::size_t count, std::size_t size, std::uint64_t seed) {
    if (count == 0) throw ContractError("synthetic set needs at least one pair");
    if (size < kMinImageSide) {
        throw InputTooSmallError("synthetic images need a side of at least " + std::to_string(kMinImageSide));
    }
    const std::size_t n = 3 * size * size;
    std::vector<SyntheticPair> pairs;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string id = std::to_string(i);
        // Reference: smoothed white noise, rescaled per channel around mid-gray.
        CounterRng tex(seed, "synthetic.texture." + id);
        std::vector<double> ref(n);
        for (auto& x : ref) x = tex.normal(0.0, 1.0);
        blur_planes(ref, 3, size, size, 1.5);
        for (std::size_t c = 0; c < 3; ++c) {
            auto* p = ref.data() + c * size * size;
            double sq = 0.0;
            for (std::size_t j = 0; j < size * size; ++j) sq += p[j] * p[j];
            const double sd = std::sqrt(sq / static_cast<double>(size * size));
            for (std::size_t j = 0; j < size * size; ++j) p[j] = 0.5 + 0.18 * p[j] / sd;
        }
        SyntheticPair pair;
        pair.ref = quantized(ref, size);
        pair.strength = static_cast<double>(i + 1) / static_cast<double>(count);
        pair.mos = 1.0 - pair.strength;

        std::vector<double> dist(pair.ref.data().begin(), pair.ref.data().end());
        blur_planes(dist, 3, size, size, 2.0 * pair.strength);
        CounterRng noise(seed, "synthetic.noise." + id);
        for (auto& x : dist) x += noise.normal(0.0, 0.1 * pair.strength);
        pair.dist = quantized(dist, size);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

fs::path write_synthetic(const fs::path& dir, const std::vector<SyntheticPair>& pairs) {
    fs::create_directories(dir);
    std::vector<ManifestRow> rows;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        ManifestRow r;
        r.ref_path = dir / ("ref_" + std::to_string(i) + ".png");
        r.dist_path = dir / ("dist_" + std::to_string(i) + ".png");
        r.mos = pairs[i].mos;
        write_image(r.ref_path, pairs[i].ref);
        write_image(r.dist_path, pairs[i].dist);
        rows.push_back(std::move(r));
    }
    const fs::path manifest = dir / "manifest.csv";
    save_manifest(manifest, rows);
    return manifest;
}

}  // namespace msfpt
