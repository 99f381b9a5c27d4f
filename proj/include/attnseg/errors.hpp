#ifndef ATTNSEG_ERRORS_HPP
#define ATTNSEG_ERRORS_HPP

#include <stdexcept>

namespace attnseg {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TimestepError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ClassCountError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CompatibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LabelRangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AggregationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SplitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IngestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace attnseg

#endif
