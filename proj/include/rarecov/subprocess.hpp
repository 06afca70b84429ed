// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <string>

namespace rarecov::util {

struct RunResult {
  int exit_code = -1;
  bool timed_out = false;
  bool spawn_failed = false;
  bool tool_missing = false;  // sh reported 127 (command not found)
  double elapsed_s = 0.0;
  std::string output;  // stdout and stderr merged
};

/// Run a shell command with a wall-clock budget. The child runs in its own
/// process group; on timeout the whole group receives SIGKILL, so simulator
/// child processes cannot outlive the budget. waitpid is always reached.
inline RunResult run_command(const std::string& shell_cmd, double timeout_s) {
  RunResult res;
  int pipefd[2];
  if (pipe(pipefd) != 0) {
    res.spawn_failed = true;
    return res;
  }
  auto start = std::chrono::steady_clock::now();
  pid_t pid = fork();
  if (pid < 0) {
    close(pipefd[0]);
    close(pipefd[1]);
    res.spawn_failed = true;
    return res;
  }
  if (pid == 0) {
    setpgid(0, 0);
    dup2(pipefd[1], STDOUT_FILENO);
    dup2(pipefd[1], STDERR_FILENO);
    close(pipefd[0]);
    close(pipefd[1]);
    execl("/bin/sh", "sh", "-c", shell_cmd.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(pipefd[1]);
  fcntl(pipefd[0], F_SETFL, O_NONBLOCK);

  auto deadline = start + std::chrono::duration<double>(timeout_s);
  char buf[4096];
  bool open = true;
  while (open) {
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      kill(-pid, SIGKILL);
      res.timed_out = true;
      break;
    }
    int wait_ms = static_cast<int>(
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
    struct pollfd pfd{pipefd[0], POLLIN, 0};
    int pr = poll(&pfd, 1, wait_ms > 0 ? std::min(wait_ms, 200) : 1);
    if (pr > 0) {
      ssize_t n;
      while ((n = read(pipefd[0], buf, sizeof buf)) > 0) res.output.append(buf, static_cast<size_t>(n));
      if (n == 0) open = false;  // writer closedpipe: child and descendants exited
    }
  }
  // Drain whatever arrived before the kill
  ssize_t n;
  while ((n = read(pipefd[0], buf, sizeof buf)) > 0) res.output.append(buf, static_cast<size_t>(n));
  close(pipefd[0]);

  int status = 0;
  waitpid(pid, &status, 0);
  res.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (WIFEXITED(status)) {
    res.exit_code = WEXITSTATUS(status);
    if (res.exit_code == 127) res.tool_missing = true;
  } else if (WIFSIGNALED(status)) {
    res.exit_code = 128 + WTERMSIG(status);
  }
  return res;
}

}  // namespace rarecov::util
