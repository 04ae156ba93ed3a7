#include "gridsweep/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

namespace gridsweep {

namespace {

bool fill_addr(const std::string& host, int port, sockaddr_in* addr) {
  std::memset(addr, 0, sizeof(*addr));
  addr->sin_family = AF_INET;
  addr->sin_port = htons(static_cast<uint16_t>(port));
  return inet_pton(AF_INET, host.c_str(), &addr->sin_addr) == 1;
}

}  // namespace

TcpConn::~TcpConn() {
  if (fd_ >= 0) close(fd_);
}

bool TcpConn::send_line(const std::string& line) {
  std::lock_guard<std::mutex> lock(write_mu_);
  std::string out = line;
  out.push_back('\n');
  std::size_t sent = 0;
  while (sent < out.size()) {
    ssize_t n = send(fd_, out.data() + sent, out.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<std::string> TcpConn::recv_line() {
  for (;;) {
    std::size_t nl = rdbuf_.find('\n');
    if (nl != std::string::npos) {
      std::string line = rdbuf_.substr(0, nl);
      rdbuf_.erase(0, nl + 1);
      return line;
    }
    char chunk[16384];
    ssize_t n = recv(fd_, chunk, sizeof(chunk), 0);
    if (n > 0) {
      rdbuf_.append(chunk, static_cast<std::size_t>(n));
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    return std::nullopt;  // EOF or error; any partial record is dropped
  }
}

void TcpConn::shutdown_both() { shutdown(fd_, SHUT_RDWR); }

ConnPtr tcp_dial(const std::string& host, int port, double timeout_sec) {
  sockaddr_in addr;
  if (!fill_addr(host, port, &addr)) return nullptr;
  int fd = socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return nullptr;

  int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc != 0) {
    if (errno != EINPROGRESS) {
      close(fd);
      return nullptr;
    }
    pollfd pfd{fd, POLLOUT, 0};
    rc = poll(&pfd, 1, static_cast<int>(timeout_sec * 1000));
    int err = 0;
    socklen_t len = sizeof(err);
    if (rc <= 0 || getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0 ||
        err != 0) {
      close(fd);
      return nullptr;
    }
  }
  fcntl(fd, F_SETFL, flags);
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_shared<TcpConn>(fd);
}

TcpListener::TcpListener(const std::string& host, int port) : host_(host) {
  sockaddr_in addr;
  if (!fill_addr(host, port, &addr)) {
    throw std::runtime_error("bad listen address: " + host);
  }
  fd_ = socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error("socket() failed");
  int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      listen(fd_, 64) != 0) {
    close(fd_);
    throw std::runtime_error("cannot listen on " + host + ":" +
                             std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { close_listener(); }

ConnPtr TcpListener::accept_conn() {
  for (;;) {
    int fd = accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      int one = 1;
      setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return std::make_shared<TcpConn>(fd);
    }
    if (errno == EINTR) continue;
    return nullptr;
  }
}

void TcpListener::close_listener() {
  if (fd_ >= 0) {
    shutdown(fd_, SHUT_RDWR);
    close(fd_);
    fd_ = -1;
  }
}

std::thread start_envelope_reader(ConnPtr conn, uint64_t source_id,
                                  Mailbox<Incoming>& mb) {
  return std::thread([conn, source_id, &mb] {
    for (;;) {
      std::optional<std::string> line = conn->recv_line();
      if (!line) {
        mb.push(Incoming{source_id, Incoming::What::Eof, {}, {}});
        return;
      }
      if (line->empty()) continue;
      Incoming item;
      item.source_id = source_id;
      try {
        item.env = decode(*line);
        item.what = Incoming::What::Env;
      } catch (const DecodeError& e) {
        item.what = Incoming::What::BadLine;
        item.text = e.what();
      }
      mb.push(std::move(item));
    }
  });
}

std::thread start_fd_line_reader(int fd, uint64_t source_id,
                                 Mailbox<Incoming>& mb) {
  return std::thread([fd, source_id, &mb] {
    std::string buf;
    char chunk[16384];
    for (;;) {
      ssize_t n = read(fd, chunk, sizeof(chunk));
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buf.append(chunk, static_cast<std::size_t>(n));
      std::size_t nl;
      while ((nl = buf.find('\n')) != std::string::npos) {
        std::string line = buf.substr(0, nl);
        buf.erase(0, nl + 1);
        if (!line.empty()) {
          mb.push(Incoming{source_id, Incoming::What::Line, {}, line});
        }
      }
    }
    close(fd);
    mb.push(Incoming{source_id, Incoming::What::Eof, {}, {}});
  });
}

}  // namespace gridsweep
