#include "alseg/grid.hpp"

#include "alseg/error.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace alseg {

Box3 intersect(const Box3& a, const Box3& b) {
    return Box3{{std::max(a.lo.x, b.lo.x), std::max(a.lo.y, b.lo.y), std::max(a.lo.z, b.lo.z)},
                {std::min(a.hi.x, b.hi.x), std::min(a.hi.y, b.hi.y), std::min(a.hi.z, b.hi.z)}};
}

std::string to_string(const Index3& p) { return fmt::format("({},{},{})", p.x, p.y, p.z); }

std::string to_string(const Box3& b) {
    return fmt::format("[{} .. {}]", to_string(b.lo), to_string(b.hi));
}

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::OutOfRange: return "out_of_range";
    case ErrorCode::SizeMismatch: return "size_mismatch";
    case ErrorCode::UnknownDType: return "unknown_dtype";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Corrupt: return "corrupt";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::SingleClass: return "single_class";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::NotConverged: return "not_converged";
    case ErrorCode::NotTrained: return "not_trained";
    case ErrorCode::NotComputed: return "not_computed";
    case ErrorCode::Busy: return "busy";
    case ErrorCode::NotFound: return "not_found";
    }
    return "unknown";
}

} // namespace alseg
