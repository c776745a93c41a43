#pragma once

#include <stdexcept>
#include <string>

namespace ctmc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define CTMC_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                  \
    public:                                                      \
        explicit Name(const std::string& what) : Error(what) {}  \
    };

CTMC_DEFINE_ERROR(DimensionMismatch)
CTMC_DEFINE_ERROR(OutOfHorizon)
CTMC_DEFINE_ERROR(NonnegativityViolation)
CTMC_DEFINE_ERROR(InvalidRates)
CTMC_DEFINE_ERROR(GridMismatch)
CTMC_DEFINE_ERROR(NoConvergence)
CTMC_DEFINE_ERROR(OffGrid)
CTMC_DEFINE_ERROR(AtDiscontinuity)
CTMC_DEFINE_ERROR(InvalidDistribution)
CTMC_DEFINE_ERROR(VacuousResurrection)
CTMC_DEFINE_ERROR(ActionNotAvailable)
CTMC_DEFINE_ERROR(DegenerateConditioning)
CTMC_DEFINE_ERROR(ConfigError)

#undef CTMC_DEFINE_ERROR

}  // namespace ctmc
