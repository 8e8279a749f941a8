#pragma once

#include <stdexcept>
#include <string>

namespace crownseg {

/// Base class for every error raised by the library. `code()` is a stable
/// upper-case identifier that the command-line tool prints verbatim.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define CROWNSEG_DEFINE_ERROR(Name, Code)                                      \
    class Name : public Error {                                                \
    public:                                                                    \
        explicit Name(const std::string& message) : Error(Code, message) {}   \
    }

CROWNSEG_DEFINE_ERROR(DimensionError, "DIMENSION_ERROR");
CROWNSEG_DEFINE_ERROR(ParameterError, "PARAMETER_ERROR");
CROWNSEG_DEFINE_ERROR(StateError, "STATE_ERROR");
CROWNSEG_DEFINE_ERROR(EmptySupportError, "EMPTY_SUPPORT");
CROWNSEG_DEFINE_ERROR(DegenerateInstanceError, "DEGENERATE_INSTANCE");
CROWNSEG_DEFINE_ERROR(BalanceInfeasibleError, "BALANCE_INFEASIBLE");
CROWNSEG_DEFINE_ERROR(TrainingDivergedError, "TRAINING_DIVERGED");
CROWNSEG_DEFINE_ERROR(FormatError, "FORMAT_ERROR");
CROWNSEG_DEFINE_ERROR(LengthError, "LENGTH_ERROR");
CROWNSEG_DEFINE_ERROR(ValidationError, "VALIDATION_ERROR");
CROWNSEG_DEFINE_ERROR(GenerationError, "GENERATION_ERROR");
CROWNSEG_DEFINE_ERROR(SplitError, "SPLIT_ERROR");
CROWNSEG_DEFINE_ERROR(EmptyEvaluationError, "EMPTY_EVALUATION");
CROWNSEG_DEFINE_ERROR(IoError, "IO_ERROR");
CROWNSEG_DEFINE_ERROR(ConfigError, "CONFIG_ERROR");

#undef CROWNSEG_DEFINE_ERROR

} // namespace crownseg
