#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>

namespace wagemix {

/// Opaque string identifier tagged by what it identifies. Ordering is
/// lexicographic on the underlying string.
template <class Tag>
struct Id {
  std::string value;

  Id() = default;
  explicit Id(std::string v) : value(std::move(v)) {}

  auto operator<=>(const Id&) const = default;
  bool operator==(const Id&) const = default;
};

using WorkerId = Id<struct WorkerTag>;
using FirmId = Id<struct FirmTag>;

enum class Gender { F = 0, M = 1 };

inline constexpr int kGenders = 2;
inline constexpr int index_of(Gender g) { return static_cast<int>(g); }
inline constexpr Gender gender_at(int i) { return i == 0 ? Gender::F : Gender::M; }
inline const char* to_string(Gender g) { return g == Gender::F ? "F" : "M"; }

}  // namespace wagemix

template <class Tag>
struct std::hash<wagemix::Id<Tag>> {
  std::size_t operator()(const wagemix::Id<Tag>& id) const noexcept {
    return std::hash<std::string>{}(id.value);
  }
};
