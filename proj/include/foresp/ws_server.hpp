#pragma once

#include "foresp/service.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace foresp {

struct ServerConfig {
    std::string address = "127.0.0.1";
    unsigned short port = 8765;           // 0 picks a free port
    std::filesystem::path static_root;    // UI bundle; empty serves a stub page
    std::string ws_path = "/ws";
};

// Maps a request target onto a file below root. Rejects parent segments
// and anything that resolves outside root. "/" means index.html.
std::optional<std::filesystem::path> resolve_static(const std::filesystem::path& root, const std::string& target);
std::string mime_type(const std::filesystem::path& p);

// WebSocket message endpoint plus a same-origin static file server.
// Commands are handed to the service on one control thread, in arrival
// order; service events are pushed to every connected client.
class WsServer {
public:
    WsServer(Service& service, ServerConfig cfg);
    ~WsServer();
    WsServer(const WsServer&) = delete;
    WsServer& operator=(const WsServer&) = delete;

    unsigned short port() const;
    void start(); // returns once listening; runs on background threads
    void run();   // start() and block until stop()
    void stop();

    struct Impl; // opaque

private:
    std::unique_ptr<Impl> impl_;
};

} // namespace foresp
