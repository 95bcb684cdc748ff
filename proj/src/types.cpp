#include "mmtta/types.hpp"

#include <string>

#include "mmtta/errors.hpp"

namespace mmtta {

std::string_view to_string(Perspective p) {
  switch (p) {
    case Perspective::M1:
      return "m1";
    case Perspective::M2:
      return "m2";
    case Perspective::Fused:
      return "fused";
  }
  return "unknown";
}

Perspective perspective_from_string(std::string_view s) {
  if (s == "m1") return Perspective::M1;
  if (s == "m2") return Perspective::M2;
  if (s == "fused") return Perspective::Fused;
  throw ContractViolation("unknown perspective '" + std::string(s) + "'");
}

}  // namespace mmtta
