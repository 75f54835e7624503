#pragma once

#include <array>
#include <string>

namespace mrcn {

// One of the six feature paths that flow through the shared backbone tail.
enum class Branch { kOrigV, kOrigN, kMrmV, kMrmN, kMcmV, kMcmN };

inline constexpr std::array<Branch, 6> kAllBranches = {
    Branch::kOrigV, Branch::kOrigN, Branch::kMrmV,
    Branch::kMrmN,  Branch::kMcmV,  Branch::kMcmN};

const char* to_string(Branch b);
Branch branch_from_string(const std::string& s);

}  // namespace mrcn
