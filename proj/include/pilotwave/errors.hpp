#pragma once

#include <stdexcept>
#include <string>

namespace pilotwave {

// Base for everything thrown by this library; CLI maps these to exit code 3
// (config problems are caught earlier and map to 2).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };          // mismatched grid/vector shapes
struct ArgumentError : Error { using Error::Error; };       // bad parameter values
struct OutOfDomainError : Error { using Error::Error; };    // point left the interpolable region
struct NodeProximityError : Error { using Error::Error; };  // |psi|^2 below node guard
struct DegenerateDensityError : Error { using Error::Error; };  // sampling from zero mass
struct BlowupError : Error { using Error::Error; };         // non-finite amplitudes after a step
struct ConvergenceError : Error { using Error::Error; };    // iterative solve missed tolerance
struct StepSizeError : Error { using Error::Error; };       // dt violates a stability bound
struct StiffnessError : Error { using Error::Error; };      // jump rates too fast for substepping
struct TruncationError : Error { using Error::Error; };     // top-sector mass above policy bound
struct BoundaryConditionError : Error { using Error::Error; };  // state violates the r=0 condition
struct UndefinedRateError : Error { using Error::Error; };  // emission rate with empty source sector
struct FoliationError : Error { using Error::Error; };      // leaves not spacelike / not covering
struct ExperimentInvalidError : Error { using Error::Error; };  // excluded fraction too large

}  // namespace pilotwave
