#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neuroprobe {

enum class Errc {
    MissingFile,
    MalformedFile,
    SizeMismatch,
    NonFiniteValue,
    LayerMapGap,
    LabelAlignmentError,
    SplitMismatch,
    EmptyVocabulary,
    DegenerateTagset,
    EmptyInput,
    DimensionMismatch,
    EmptySubset,
    IndexOutOfRange,
    InvalidConfig,
    TrainingDiverged,
    ZeroMass,
    InvalidN,
    MissingRanking,
};

constexpr std::string_view to_string(Errc code) noexcept
{
    switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::MalformedFile: return "MalformedFile";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::LayerMapGap: return "LayerMapGap";
    case Errc::LabelAlignmentError: return "LabelAlignmentError";
    case Errc::SplitMismatch: return "SplitMismatch";
    case Errc::EmptyVocabulary: return "EmptyVocabulary";
    case Errc::DegenerateTagset: return "DegenerateTagset";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptySubset: return "EmptySubset";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::TrainingDiverged: return "TrainingDiverged";
    case Errc::ZeroMass: return "ZeroMass";
    case Errc::InvalidN: return "InvalidN";
    case Errc::MissingRanking: return "MissingRanking";
    }
    return "Unknown";
}

/// Errors raised while reading or validating a dataset container. The CLI maps
/// these to exit code 1; everything else is a runtime failure.
constexpr bool is_validation_error(Errc code) noexcept
{
    switch (code) {
    case Errc::MissingFile:
    case Errc::MalformedFile:
    case Errc::SizeMismatch:
    case Errc::NonFiniteValue:
    case Errc::LayerMapGap:
    case Errc::LabelAlignmentError:
    case Errc::SplitMismatch:
        return true;
    default:
        return false;
    }
}

class Error : public std::runtime_error
{
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace neuroprobe
