#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace coconv {

using index_t = std::int64_t;

// Tensor dimensions inconsistent with an operation.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Convolution/pooling geometry that cannot produce output (kernel larger
// than the padded input, nonpositive stride, ...).
struct GeometryError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid layer spec or architecture config document.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Cost comparison attempted between incomparable layers.
struct ComparisonError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed dataset file or degenerate batch.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training, with position diagnostics.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, int epoch_, int batch_, double lr_)
        : std::runtime_error(what), epoch(epoch_), batch(batch_), lr(lr_) {}
    int epoch = 0;
    int batch = 0;
    double lr = 0.0;
};

}  // namespace coconv
