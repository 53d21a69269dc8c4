#include "foresp/ws_server.hpp"

#include "foresp/error.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <condition_variable>
#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace foresp {

namespace fs = std::filesystem;
namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

const char* kStubPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>foresp</title></head>
<body><p>foresp service is running. Connect a client to <code>/ws</code>.</p></body></html>
)";

} // namespace

std::optional<fs::path> resolve_static(const fs::path& root, const std::string& target)
{
    std::string path = target.substr(0, target.find_first_of("?#"));
    if (path.empty() || path.front() != '/')
        return std::nullopt;
    if (path.back() == '/')
        path += "index.html";
    fs::path rel;
    std::stringstream ss(path.substr(1));
    std::string seg;
    while (std::getline(ss, seg, '/')) {
        if (seg.empty() || seg == ".")
            continue;
        if (seg == ".." || seg.find('\\') != std::string::npos || seg.find('\0') != std::string::npos)
            return std::nullopt;
        rel /= seg;
    }
    if (rel.empty())
        return std::nullopt;
    std::error_code ec;
    const fs::path base = fs::weakly_canonical(root, ec);
    if (ec)
        return std::nullopt;
    const fs::path full = fs::weakly_canonical(base / rel, ec);
    if (ec)
        return std::nullopt;
    const auto [b, f] = std::mismatch(base.begin(), base.end(), full.begin(), full.end());
    if (b != base.end())
        return std::nullopt;
    return full;
}

std::string mime_type(const fs::path& p)
{
    const std::string ext = p.extension().string();
    if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
    if (ext == ".js" || ext == ".mjs") return "text/javascript";
    if (ext == ".css") return "text/css";
    if (ext == ".json") return "application/json";
    if (ext == ".svg") return "image/svg+xml";
    if (ext == ".png") return "image/png";
    if (ext == ".ico") return "image/x-icon";
    if (ext == ".wasm") return "application/wasm";
    if (ext == ".map" || ext == ".txt") return "text/plain";
    return "application/octet-stream";
}

struct WsServer::Impl {
    Service& svc;
    ServerConfig cfg;
    net::io_context ioc{1};
    net::io_context ctl{1}; // the control loop: commands run here in order
    tcp::acceptor acceptor{ioc};
    std::optional<net::executor_work_guard<net::io_context::executor_type>> ctl_work;
    std::thread io_thread, ctl_thread;
    bool started = false;
    std::mutex run_mu;
    std::condition_variable run_cv;
    bool stopped = false;

    Impl(Service& s, ServerConfig c) : svc(s), cfg(std::move(c)) {}

    void accept();
    http::response<http::string_body> static_response(const http::request<http::string_body>& req) const;
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket&& s, WsServer::Impl& srv) : ws_(std::move(s)), srv_(srv) {}

    ~WsSession()
    {
        if (token_)
            srv_.svc.unsubscribe(token_);
    }

    void run(http::request<http::string_body> req)
    {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

private:
    void on_accept(beast::error_code ec)
    {
        if (ec)
            return;
        // The sink runs on service threads: it only posts, and the weak
        // pointer is locked on the io thread.
        std::weak_ptr<WsSession> weak = shared_from_this();
        auto exec = ws_.get_executor();
        token_ = srv_.svc.subscribe([weak, exec](const nlohmann::json& ev) {
            net::post(exec, [weak, text = ev.dump()] {
                if (auto self = weak.lock())
                    self->send(text);
            });
        });
        do_read();
    }

    void do_read()
    {
        ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec)
    {
        if (ec)
            return;
        std::string text = beast::buffers_to_string(buf_.data());
        buf_.consume(buf_.size());
        std::weak_ptr<WsSession> weak = shared_from_this();
        auto exec = ws_.get_executor();
        Service& svc = srv_.svc;
        net::post(srv_.ctl, [weak, exec, &svc, text = std::move(text)] {
            std::string reply = svc.handle_text(text);
            net::post(exec, [weak, reply = std::move(reply)] {
                if (auto self = weak.lock())
                    self->send(reply);
            });
        });
        do_read();
    }

    void send(std::string text)
    {
        queue_.push_back(std::move(text));
        if (queue_.size() == 1)
            do_write();
    }

    void do_write()
    {
        ws_.text(true);
        ws_.async_write(net::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec)
                return;
            self->queue_.pop_front();
            if (!self->queue_.empty())
                self->do_write();
        });
    }

    websocket::stream<beast::tcp_stream> ws_;
    WsServer::Impl& srv_;
    beast::flat_buffer buf_;
    std::deque<std::string> queue_;
    int token_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& s, WsServer::Impl& srv) : stream_(std::move(s)), srv_(srv) {}

    void run() { do_read(); }

private:
    void do_read()
    {
        req_ = {};
        stream_.expires_after(std::chrono::seconds(30));
        http::async_read(stream_, buf_, req_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec)
    {
        if (ec)
            return;
        if (websocket::is_upgrade(req_)) {
            const std::string target(req_.target());
            if (target.substr(0, target.find('?')) == srv_.cfg.ws_path) {
                stream_.expires_never();
                std::make_shared<WsSession>(stream_.release_socket(), srv_)->run(std::move(req_));
                return;
            }
        }
        res_ = std::make_shared<http::response<http::string_body>>(srv_.static_response(req_));
        http::async_write(stream_, *res_, [self = shared_from_this()](beast::error_code ec2, std::size_t) {
            if (ec2 || self->res_->need_eof()) {
                beast::error_code ignored;
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                return;
            }
            self->do_read();
        });
    }

    beast::tcp_stream stream_;
    WsServer::Impl& srv_;
    beast::flat_buffer buf_;
    http::request<http::string_body> req_;
    std::shared_ptr<http::response<http::string_body>> res_;
};

} // namespace

http::response<http::string_body> WsServer::Impl::static_response(const http::request<http::string_body>& req) const
{
    auto make = [&](http::status st, std::string body, std::string type) {
        http::response<http::string_body> res{st, req.version()};
        res.set(http::field::server, "foresp");
        res.set(http::field::content_type, type);
        res.keep_alive(req.keep_alive());
        if (req.method() != http::verb::head)
            res.body() = std::move(body);
        res.content_length(res.body().size());
        return res;
    };
    if (req.method() != http::verb::get && req.method() != http::verb::head)
        return make(http::status::method_not_allowed, "method not allowed\n", "text/plain");
    const std::string target(req.target());
    if (cfg.static_root.empty()) {
        if (target == "/" || target == "/index.html")
            return make(http::status::ok, kStubPage, "text/html; charset=utf-8");
        return make(http::status::not_found, "not found\n", "text/plain");
    }
    const auto path = resolve_static(cfg.static_root, target);
    if (!path)
        return make(http::status::bad_request, "bad path\n", "text/plain");
    std::ifstream f(*path, std::ios::binary);
    if (!f || fs::is_directory(*path))
        return make(http::status::not_found, "not found\n", "text/plain");
    std::ostringstream body;
    body << f.rdbuf();
    return make(http::status::ok, body.str(), mime_type(*path));
}

void WsServer::Impl::accept()
{
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket s) {
        if (ec)
            return;
        std::make_shared<HttpSession>(std::move(s), *this)->run();
        accept();
    });
}

WsServer::WsServer(Service& service, ServerConfig cfg) : impl_(std::make_unique<Impl>(service, std::move(cfg)))
{
    beast::error_code ec;
    const auto addr = net::ip::make_address(impl_->cfg.address, ec);
    if (ec)
        throw Error(Errc::invalid_argument, "bad listen address " + impl_->cfg.address);
    const tcp::endpoint ep{addr, impl_->cfg.port};
    auto& a = impl_->acceptor;
    a.open(ep.protocol(), ec);
    if (!ec)
        a.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec)
        a.bind(ep, ec);
    if (!ec)
        a.listen(net::socket_base::max_listen_connections, ec);
    if (ec)
        throw Error(Errc::device_unavailable, "cannot listen on " + impl_->cfg.address + ":" +
                                                  std::to_string(impl_->cfg.port) + ": " + ec.message());
}

WsServer::~WsServer() { stop(); }

unsigned short WsServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void WsServer::start()
{
    if (impl_->started)
        return;
    impl_->started = true;
    impl_->ctl_work.emplace(net::make_work_guard(impl_->ctl));
    impl_->ctl_thread = std::thread([this] { impl_->ctl.run(); });
    impl_->accept();
    impl_->io_thread = std::thread([this] { impl_->ioc.run(); });
}

void WsServer::run()
{
    start();
    std::unique_lock lock(impl_->run_mu);
    impl_->run_cv.wait(lock, [this] { return impl_->stopped; });
}

void WsServer::stop()
{
    if (!impl_ || !impl_->started)
        return;
    {
        std::lock_guard lock(impl_->run_mu);
        if (impl_->stopped)
            return;
        impl_->stopped = true;
    }
    impl_->run_cv.notify_all();
    net::post(impl_->ioc, [this] {
        beast::error_code ec;
        impl_->acceptor.close(ec);
    });
    impl_->ctl_work.reset();
    impl_->ctl.stop();
    impl_->ioc.stop();
    if (impl_->io_thread.joinable())
        impl_->io_thread.join();
    if (impl_->ctl_thread.joinable())
        impl_->ctl_thread.join();
}

} // namespace foresp
