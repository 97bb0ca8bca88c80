#include "ciac/teleop_server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <thread>

#include <boost/asio/signal_set.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

namespace ciac {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

std::string health_json(std::size_t active_sessions) {
  return json{{"service", "ciac-teleop"},
              {"version", kServiceVersion},
              {"protocol", kProtocolVersion},
              {"active_sessions", active_sessions}}
      .dump();
}

namespace {

std::map<std::string, std::string> query_of(std::string_view target) {
  std::map<std::string, std::string> q;
  const auto mark = target.find('?');
  if (mark == std::string_view::npos) return q;
  std::string_view rest = target.substr(mark + 1);
  while (!rest.empty()) {
    const auto amp = rest.find('&');
    const std::string_view kv = rest.substr(0, amp);
    const auto eq = kv.find('=');
    if (eq != std::string_view::npos) q[std::string(kv.substr(0, eq))] = std::string(kv.substr(eq + 1));
    else if (!kv.empty()) q[std::string(kv)] = "";
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
  return q;
}

std::string_view path_of(std::string_view target) { return target.substr(0, target.find('?')); }

}  // namespace

struct Client;

struct LiveSession {
  std::shared_ptr<Session> session;
  std::mutex mutex;
  std::vector<std::weak_ptr<Client>> clients;
  std::thread loop;
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  bool stopping = false;
  std::atomic<bool> closed = false;

  void stop() {
    {
      std::lock_guard lock(stop_mutex);
      stopping = true;
    }
    stop_cv.notify_all();
    if (loop.joinable()) loop.join();
  }
};

struct TeleopServer::Impl {
  ServerOptions options;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread thread;
  mutable std::mutex mutex;
  std::map<std::string, std::shared_ptr<LiveSession>> sessions;
  std::uint64_t next_id = 1;

  void accept();
  void handle(tcp::socket socket);
  std::shared_ptr<LiveSession> open(const std::string& preset, std::uint64_t seed);
  std::shared_ptr<LiveSession> find(const std::string& id);
  void detach(const std::shared_ptr<LiveSession>& live);
  void close(const std::shared_ptr<LiveSession>& live);
  void shutdown();
  std::size_t count() const {
    std::lock_guard lock(mutex);
    return sessions.size();
  }
};

struct Client : std::enable_shared_from_this<Client> {
  websocket::stream<beast::tcp_stream> ws;
  beast::flat_buffer buffer;
  std::deque<std::shared_ptr<const std::string>> queue;
  bool writing = false;
  bool finished = false;
  std::shared_ptr<LiveSession> live;
  Hand hand = Hand::Right;
  TeleopServer::Impl* server;

  Client(tcp::socket&& socket, std::shared_ptr<LiveSession> l, Hand h, TeleopServer::Impl* s)
      : ws(std::move(socket)), live(std::move(l)), hand(h), server(s) {}

  void start(http::request<http::string_body> req) {
    ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws.text(true);
    ws.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return self->finish();
      {
        std::lock_guard lock(self->live->mutex);
        self->live->clients.push_back(self);
      }
      json hello = {{"v", kProtocolVersion},
                    {"type", "hello"},
                    {"tick", self->live->session->ticks()},
                    {"session", self->live->session->id()},
                    {"hand", to_string(self->hand)},
                    {"mode", to_string(self->live->session->setup().mode)}};
      self->send(std::make_shared<const std::string>(hello.dump()));
      self->read();
    });
  }

  void read() {
    ws.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->finish();
      const std::string text = beast::buffers_to_string(self->buffer.data());
      self->buffer.consume(self->buffer.size());
      std::string reply;
      try {
        ClientInput in = parse_client_input(text);
        if (in.hand != self->hand) throw ProtocolError("this connection drives the " + std::string(to_string(self->hand)) + " hand");
        self->live->session->queue(in);
        reply = ack_frame(self->live->session->ticks());
      } catch (const ProtocolError& e) {
        reply = error_frame(self->live->session->ticks(), e.what());
      }
      self->send(std::make_shared<const std::string>(std::move(reply)));
      self->read();
    });
  }

  // Runs on the connection's executor.
  void send(std::shared_ptr<const std::string> msg) {
    if (finished) return;
    if (queue.size() >= server->options.max_queue) {
      beast::error_code ec;
      beast::get_lowest_layer(ws).socket().close(ec);
      return finish();
    }
    queue.push_back(std::move(msg));
    if (!writing) write_next();
  }

  void write_next() {
    writing = true;
    auto msg = queue.front();
    ws.async_write(net::buffer(*msg), [self = shared_from_this(), msg](beast::error_code ec, std::size_t) {
      if (ec) return self->finish();
      self->queue.pop_front();
      if (self->queue.empty()) self->writing = false;
      else self->write_next();
    });
  }

  void finish() {
    if (finished) return;
    finished = true;
    queue.clear();
    live->session->release(hand);
    {
      std::lock_guard lock(live->mutex);
      std::erase_if(live->clients, [this](const std::weak_ptr<Client>& w) {
        const auto c = w.lock();
        return !c || c.get() == this;
      });
    }
    server->detach(live);
  }
};

void TeleopServer::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [self = this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    if (self->options.send_buffer > 0) socket.set_option(net::socket_base::send_buffer_size(self->options.send_buffer), ec);
    self->handle(std::move(socket));
    self->accept();
  });
}

void TeleopServer::Impl::handle(tcp::socket socket) {
  struct Request {
    beast::tcp_stream stream;
    beast::flat_buffer buffer;
    http::request<http::string_body> req;
    explicit Request(tcp::socket&& s) : stream(std::move(s)) {}
  };
  auto r = std::make_shared<Request>(std::move(socket));
  r->stream.expires_after(std::chrono::seconds(10));
  http::async_read(r->stream, r->buffer, r->req, [self = this, r](beast::error_code ec, std::size_t) {
    if (ec) return;
    auto respond = [&](http::status status, const std::string& body) {
      auto res = std::make_shared<http::response<http::string_body>>(status, r->req.version());
      res->set(http::field::content_type, "application/json");
      res->keep_alive(false);
      res->body() = body;
      res->prepare_payload();
      http::async_write(r->stream, *res, [r, res](beast::error_code, std::size_t) {
        beast::error_code ignored;
        r->stream.socket().shutdown(tcp::socket::shutdown_send, ignored);
      });
    };
    const std::string target(r->req.target());
    const std::string_view path = path_of(target);
    if (path == "/health" && r->req.method() == http::verb::get && !websocket::is_upgrade(r->req))
      return respond(http::status::ok, health_json(self->count()));
    if (path != "/session") return respond(http::status::not_found, error_frame(0, "unknown endpoint"));
    if (!websocket::is_upgrade(r->req)) return respond(http::status::bad_request, error_frame(0, "websocket upgrade required"));

    const auto q = query_of(target);
    std::shared_ptr<LiveSession> live;
    Hand hand = Hand::Right;
    try {
      if (q.count("hand")) hand = parse_hand(q.at("hand"));
      if (q.count("session")) {
        live = self->find(q.at("session"));
        if (!live) return respond(http::status::not_found, error_frame(0, "no such session"));
        bool claimed = false;
        if (q.count("hand")) claimed = live->session->claim(hand);
        else
          for (Hand h : {Hand::Right, Hand::Left})
            if (!claimed && live->session->claim(h)) claimed = true, hand = h;
        if (!claimed) return respond(http::status::conflict, error_frame(0, "hand already driven"));
      } else {
        const std::uint64_t seed = q.count("seed") ? std::stoull(q.at("seed")) : self->options.seed;
        live = self->open(q.count("preset") ? q.at("preset") : "reach", seed);
        live->session->claim(hand);
      }
    } catch (const std::exception& e) {
      return respond(http::status::bad_request, error_frame(0, e.what()));
    }
    r->stream.expires_never();
    auto client = std::make_shared<Client>(std::move(r->stream.socket()), live, hand, self);
    client->start(std::move(r->req));
  });
}

std::shared_ptr<LiveSession> TeleopServer::Impl::open(const std::string& preset, std::uint64_t seed) {
  SessionSetup setup = SessionSetup::preset(preset);
  setup.seed = seed;
  setup.spec.seeds = {seed};
  setup.model = options.model_path;
  auto live = std::make_shared<LiveSession>();
  {
    std::lock_guard lock(mutex);
    setup.id = "s" + std::to_string(next_id++);
    live->session = std::make_shared<Session>(setup, options.model);
    sessions[setup.id] = live;
  }
  const double dt = setup.spec.sim.tick;
  live->loop = std::thread([live, dt] {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(dt));
    auto next = clock::now();
    for (;;) {
      auto msg = std::make_shared<const std::string>(live->session->tick());
      {
        std::lock_guard lock(live->mutex);
        for (const auto& w : live->clients)
          if (auto c = w.lock()) net::post(c->ws.get_executor(), [c, msg] { c->send(msg); });
      }
      next += period;
      const auto now = clock::now();
      if (now > next + period) next = now;  // fell behind: skip rather than burst
      std::unique_lock lock(live->stop_mutex);
      if (live->stop_cv.wait_until(lock, next, [&] { return live->stopping; })) return;
    }
  });
  return live;
}

std::shared_ptr<LiveSession> TeleopServer::Impl::find(const std::string& id) {
  std::lock_guard lock(mutex);
  const auto it = sessions.find(id);
  return it == sessions.end() ? nullptr : it->second;
}

void TeleopServer::Impl::detach(const std::shared_ptr<LiveSession>& live) {
  if (live->session->clients() > 0) return;
  if (live->closed.exchange(true)) return;
  close(live);
  std::lock_guard lock(mutex);
  sessions.erase(live->session->id());
}

void TeleopServer::Impl::close(const std::shared_ptr<LiveSession>& live) {
  live->stop();
  if (!options.log_dir.empty()) {
    std::filesystem::create_directories(options.log_dir);
    const std::string id = live->session->id();
    live->session->log().save(options.log_dir / (id + ".log.jsonl"));
    live->session->inputs().save(options.log_dir / (id + ".inputs.jsonl"));
  }
}

void TeleopServer::Impl::shutdown() {
  beast::error_code ec;
  acceptor.close(ec);
  std::map<std::string, std::shared_ptr<LiveSession>> open;
  {
    std::lock_guard lock(mutex);
    open.swap(sessions);
  }
  for (auto& [id, live] : open)
    if (!live->closed.exchange(true)) close(live);
  for (auto& [id, live] : open) {
    std::lock_guard lock(live->mutex);
    for (const auto& w : live->clients)
      if (auto c = w.lock()) beast::get_lowest_layer(c->ws).socket().close(ec);
  }
  // let aborted client operations complete so their handlers release the clients
  ioc.restart();
  while (ioc.poll() > 0) {
  }
}

TeleopServer::TeleopServer(ServerOptions options) : impl_(std::make_shared<Impl>()) {
  impl_->options = std::move(options);
  try {
    const tcp::endpoint ep(net::ip::make_address(impl_->options.address), impl_->options.port);
    impl_->acceptor.open(ep.protocol());
    impl_->acceptor.set_option(net::socket_base::reuse_address(true));
    impl_->acceptor.bind(ep);
    impl_->acceptor.listen(net::socket_base::max_listen_connections);
  } catch (const boost::system::system_error& e) {
    throw ConfigError("cannot listen on " + impl_->options.address + ":" + std::to_string(impl_->options.port) + ": " +
                      e.code().message());
  }
  impl_->accept();
}

TeleopServer::~TeleopServer() { stop(); }

unsigned short TeleopServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void TeleopServer::start() {
  impl_->thread = std::thread([impl = impl_] { impl->ioc.run(); });
}

void TeleopServer::run() {
  net::signal_set signals(impl_->ioc, SIGINT, SIGTERM);
  signals.async_wait([impl = impl_](beast::error_code, int) { impl->ioc.stop(); });
  impl_->ioc.run();
  impl_->shutdown();
}

void TeleopServer::stop() {
  if (!impl_) return;
  net::post(impl_->ioc, [impl = impl_] {
    beast::error_code ec;
    impl->acceptor.close(ec);
  });
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->shutdown();
}

std::size_t TeleopServer::active_sessions() const { return impl_->count(); }

}  // namespace ciac
