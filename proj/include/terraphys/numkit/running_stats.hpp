#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "terraphys/common.hpp"

namespace terraphys::numkit {

// Welford-form running mean/variance per channel. Merging two accumulators
// matches the stats of the concatenated stream (Chan's parallel update).
class RunningStats {
public:
    explicit RunningStats(int channels)
        : mean_(static_cast<std::size_t>(channels), 0.0),
          m2_(static_cast<std::size_t>(channels), 0.0) {
        if (channels <= 0) fail("RunningStats: channels must be positive");
    }

    int channels() const { return static_cast<int>(mean_.size()); }
    long long count() const { return count_; }

    void add(const double* sample) {
        ++count_;
        for (std::size_t c = 0; c < mean_.size(); ++c) {
            const double d = sample[c] - mean_[c];
            mean_[c] += d / static_cast<double>(count_);
            m2_[c] += d * (sample[c] - mean_[c]);
        }
    }

    void add(const std::vector<double>& sample) {
        if (static_cast<int>(sample.size()) != channels())
            fail("RunningStats::add: sample has ", sample.size(), " channels, expected ", channels());
        add(sample.data());
    }

    void merge(const RunningStats& other) {
        if (other.channels() != channels())
            fail("RunningStats::merge: channel mismatch ", other.channels(), " vs ", channels());
        if (other.count_ == 0) return;
        if (count_ == 0) {
            *this = other;
            return;
        }
        const double na = static_cast<double>(count_);
        const double nb = static_cast<double>(other.count_);
        const double nab = na + nb;
        for (std::size_t c = 0; c < mean_.size(); ++c) {
            const double delta = other.mean_[c] - mean_[c];
            mean_[c] += delta * nb / nab;
            m2_[c] += other.m2_[c] + delta * delta * na * nb / nab;
        }
        count_ += other.count_;
    }

    double mean(int c) const { return mean_[check(c)]; }

    // Population variance; zero until two samples arrive.
    double variance(int c) const {
        check(c);
        if (count_ < 1) return 0.0;
        const double v = m2_[static_cast<std::size_t>(c)] / static_cast<double>(count_);
        return v < 0.0 ? 0.0 : v;
    }

    double stddev(int c, double floor = 1e-8) const {
        const double s = std::sqrt(variance(c));
        return s < floor ? floor : s;
    }

    double normalize(int c, double x) const { return (x - mean(c)) / stddev(c); }
    double denormalize(int c, double z) const { return mean(c) + z * stddev(c); }

    std::vector<double> means() const { return mean_; }

private:
    std::size_t check(int c) const {
        if (c < 0 || c >= channels()) fail("RunningStats: channel ", c, " out of range");
        return static_cast<std::size_t>(c);
    }

    long long count_ = 0;
    std::vector<double> mean_, m2_;
};

} // namespace terraphys::numkit
