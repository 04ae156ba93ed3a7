#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gridsweep/protocol.hpp"
#include "gridsweep/util.hpp"

namespace gridsweep {

// A connected stream socket carrying newline-delimited records. One reader;
// writes are serialized internally so the event loop and auxiliary paths can
// share the write side.
class TcpConn {
 public:
  explicit TcpConn(int fd) : fd_(fd) {}
  ~TcpConn();
  TcpConn(const TcpConn&) = delete;
  TcpConn& operator=(const TcpConn&) = delete;

  // Appends '\n'; false once the peer is gone.
  bool send_line(const std::string& line);
  // One record without the trailing newline; std::nullopt at EOF/error.
  std::optional<std::string> recv_line();
  // Unblocks any reader stuck in recv_line.
  void shutdown_both();

  int fd() const { return fd_; }

 private:
  int fd_;
  std::string rdbuf_;
  std::mutex write_mu_;
};

using ConnPtr = std::shared_ptr<TcpConn>;

// std::nullptr on refusal or timeout.
ConnPtr tcp_dial(const std::string& host, int port, double timeout_sec);

class TcpListener {
 public:
  // port 0 binds an ephemeral port; throws std::runtime_error on failure.
  TcpListener(const std::string& host, int port);
  ~TcpListener();

  ConnPtr accept_conn();  // nullptr once closed
  void close_listener();

  int port() const { return port_; }
  const std::string& host() const { return host_; }

 private:
  int fd_ = -1;
  int port_ = 0;
  std::string host_;
};

// One item of node input, produced by reader threads.
struct Incoming {
  enum class What { Env, BadLine, Eof, Line };
  uint64_t source_id = 0;
  What what = What::Eof;
  Envelope env;      // Env
  std::string text;  // BadLine: parse error; Line: the raw record
};

// Reads records from conn, decodes each into an Envelope and pushes it to mb
// (BadLine for undecodable records, Eof at end). Joinable.
std::thread start_envelope_reader(ConnPtr conn, uint64_t source_id,
                                  Mailbox<Incoming>& mb);

// Reads raw lines from fd (taking ownership) and pushes Line items, Eof at
// end. Used for worker pipes.
std::thread start_fd_line_reader(int fd, uint64_t source_id,
                                 Mailbox<Incoming>& mb);

}  // namespace gridsweep
