#pragma once

#include <stdexcept>
#include <string>

namespace gpuhammer {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define GPUHAMMER_ERROR(Name)                 \
    struct Name : Error {                     \
        using Error::Error;                   \
    }

GPUHAMMER_ERROR(TimingViolation);
GPUHAMMER_ERROR(OutOfRange);
GPUHAMMER_ERROR(ConfigError);
GPUHAMMER_ERROR(EmptyResult);
GPUHAMMER_ERROR(NotReproducible);
GPUHAMMER_ERROR(NeverFlips);
GPUHAMMER_ERROR(AlwaysFlips);
GPUHAMMER_ERROR(OutOfMemory);
GPUHAMMER_ERROR(DoubleFree);
GPUHAMMER_ERROR(Infeasible);
GPUHAMMER_ERROR(DirectionMismatch);
GPUHAMMER_ERROR(MissingInput);

#undef GPUHAMMER_ERROR

}  // namespace gpuhammer
