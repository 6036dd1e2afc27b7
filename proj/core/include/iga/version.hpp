// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

namespace iga {

std::string version();

/// Library, dependency and toolchain versions plus the scalar type, for run
/// manifests.
std::map<std::string, std::string> build_info();

}  // namespace iga
