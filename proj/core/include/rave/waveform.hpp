#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rave/errors.hpp"

namespace rave {

// Mono audio, nominal amplitude range [-1, 1].
struct Waveform {
    std::vector<float> samples;
    int sample_rate = 0;

    std::size_t size() const { return samples.size(); }

    void validate() const {
        if (sample_rate <= 0) throw DataError("waveform sample rate must be positive");
        for (float s : samples)
            if (!std::isfinite(s)) throw DataError("waveform contains non-finite samples");
    }
};

}  // namespace rave
