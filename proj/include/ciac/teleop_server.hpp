#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "ciac/teleop.hpp"

namespace ciac {

inline constexpr const char* kServiceVersion = "1.0.0";

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;   // 0 picks a free port
  std::filesystem::path log_dir;  // session and input logs are written here on close when set
  std::string model_path;
  ProbabilityModel model;
  std::size_t max_queue = 32;  // outgoing frames before a client counts as slow and is dropped
  int send_buffer = 0;         // SO_SNDBUF for client sockets, 0 keeps the system default
  std::uint64_t seed = 1;
};

std::string health_json(std::size_t active_sessions);

// WebSocket endpoint /session?preset=reach|suture|traditional[&session=id][&hand=right|left][&seed=n]
// and GET /health. Each session ticks on its own thread at the simulation rate.
class TeleopServer {
 public:
  // Binds immediately; throws ConfigError when the address cannot be bound.
  explicit TeleopServer(ServerOptions options);
  ~TeleopServer();
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  unsigned short port() const;
  // Runs the network loop on a background thread.
  void start();
  // Blocks until stop() or a signal.
  void run();
  void stop();
  std::size_t active_sessions() const;

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

}  // namespace ciac
