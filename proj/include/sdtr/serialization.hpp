#pragma once

#include <iosfwd>
#include <string>

#include "sdtr/evaluation.hpp"

namespace sdtr {

inline constexpr int kModelFormatVersion = 1;

// Versioned JSON document holding the method, feature specification,
// coefficients and fit diagnostics.
void save_model(std::ostream& out, const FittedModel& model);
FittedModel load_model(std::istream& in);  // throws DataError on malformed input

void save_model_file(const std::string& path, const FittedModel& model);
FittedModel load_model_file(const std::string& path);

}  // namespace sdtr
