#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "revealtoy/model.hpp"

namespace httplib {
class Server;
}

namespace revealtoy::service {

inline constexpr std::size_t kMaxBodyBytes = 8u << 20;
inline constexpr std::size_t kMaxBoxes = 8;
inline constexpr std::size_t kMaxSteps = 1000;
inline constexpr std::size_t kMaxScenes = 64;

std::string base64_encode(std::string_view bytes);
/// Strict padded base64; std::nullopt on any malformed input.
std::optional<std::string> base64_decode(std::string_view text);

struct Reply {
  int status = 200;
  std::string body;  // JSON
};

/// Stateless request handlers over read-only parameters; safe to call concurrently.
class DecomposeService {
 public:
  DecomposeService(ModelParams params, std::string checkpoint_id, std::size_t default_steps = 20);

  Reply health() const;
  Reply decompose(std::string_view body) const;
  /// `n` freshly generated scenes; `seed` fixes them, otherwise a random seed is drawn.
  Reply scenes(std::string_view n, std::optional<std::uint64_t> seed) const;

  const ModelParams& params() const noexcept { return params_; }
  const std::string& checkpoint_id() const noexcept { return checkpoint_id_; }

 private:
  ModelParams params_;
  std::string checkpoint_id_;
  std::size_t default_steps_;
};

/// Registers the /api routes and, when `ui_dir` is non-empty, static files.
void mount(httplib::Server& server, const DecomposeService& service, const std::filesystem::path& ui_dir);

}  // namespace revealtoy::service
