#include "msfpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "msfpt/error.hpp"

namespace msfpt {

namespace {

void check_pairs(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw ContractError(std::string(what) + ": inputs differ in length (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
    }
    if (a.size() < 2) throw ContractError(std::string(what) + ": need at least two pairs");
    for (std::span<const double> s : {a, b}) {
        for (double v : s) {
            if (!std::isfinite(v)) throw ContractError(std::string(what) + ": non-finite input");
        }
    }
}

bool is_constant(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Number of pairs within runs of equal keys in a sorted range.
template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq same_as_previous) {
    std::int64_t total = 0, run = 1;
    for (std::size_t i = 1; i <= n; ++i) {
        if (i < n && same_as_previous(i)) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total;
}

// Stable merge sort of v, returning the number of inversions.
std::int64_t sort_counting_swaps(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::int64_t swaps = sort_counting_swaps(v, buf, lo, mid) + sort_counting_swaps(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<std::int64_t>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i + 1;
        while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
        // Positions i..j-1 hold ranks i+1..j.
        const double mean_rank = static_cast<double>(i + 1 + j) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = mean_rank;
        i = j;
    }
    return ranks;
}

double plcc(std::span<const double> pred, std::span<const double> mos) {
    check_pairs(pred, mos, "plcc");
    if (is_constant(pred) || is_constant(mos)) throw UndefinedCorrelationError("plcc: constant input");
    return pearson(pred, mos);
}

double srcc(std::span<const double> pred, std::span<const double> mos) {
    check_pairs(pred, mos, "srcc");
    if (is_constant(pred) || is_constant(mos)) throw UndefinedCorrelationError("srcc: all values tied");
    const auto rp = average_ranks(pred);
    const auto rm = average_ranks(mos);
    return pearson(rp, rm);
}

double krcc(std::span<const double> pred, std::span<const double> mos, KendallVariant variant) {
    check_pairs(pred, mos, "krcc");
    if (is_constant(pred) || is_constant(mos)) throw UndefinedCorrelationError("krcc: all values tied");
    // Knight's O(n log n) algorithm: sort by (pred, mos), then count the
    // swaps a merge sort on mos needs.
    const std::size_t n = pred.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pred[a] != pred[b] ? pred[a] < pred[b] : mos[a] < mos[b];
    });
    const std::int64_t ties_x = tied_pairs(n, [&](std::size_t i) { return pred[order[i]] == pred[order[i - 1]]; });
    const std::int64_t ties_xy = tied_pairs(n, [&](std::size_t i) {
        return pred[order[i]] == pred[order[i - 1]] && mos[order[i]] == mos[order[i - 1]];
    });
    std::vector<double> y(n), buf(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = mos[order[i]];
    const std::int64_t swaps = sort_counting_swaps(y, buf, 0, n);
    const std::int64_t ties_y = tied_pairs(n, [&](std::size_t i) { return y[i] == y[i - 1]; });

    const auto total = static_cast<std::int64_t>(n * (n - 1) / 2);
    const std::int64_t concordant_minus_discordant = total - ties_x - ties_y + ties_xy - 2 * swaps;
    if (variant == KendallVariant::tau_a) {
        return static_cast<double>(concordant_minus_discordant) / static_cast<double>(total);
    }
    const double denom = std::sqrt(static_cast<double>(total - ties_x) * static_cast<double>(total - ties_y));
    return static_cast<double>(concordant_minus_discordant) / denom;
}

double main_score(double plcc_value, double srcc_value) { return plcc_value + srcc_value; }

}  // namespace msfpt
