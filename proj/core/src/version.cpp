// SPDX-License-Identifier: Apache-2.0
#include "iga/version.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <opencv2/core/version.hpp>

#include "iga/tensor.hpp"

namespace iga {

std::string version() { return IGA_VERSION_STRING; }

std::map<std::string, std::string> build_info() {
  auto str = [](auto a, auto b, auto c) {
    return std::to_string(a) + "." + std::to_string(b) + "." + std::to_string(c);
  };
  return {
      {"iga", version()},
      {"eigen", str(EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
      {"opencv", CV_VERSION},
      {"nlohmann_json", str(NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                            NLOHMANN_JSON_VERSION_PATCH)},
      {"compiler", __VERSION__},
      {"real", sizeof(real) == 4 ? "float32" : "float64"},
  };
}

}  // namespace iga
