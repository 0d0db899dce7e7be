import os
import subprocess
import sys
import time


def run_cli(args, env_extra=None):
    """Run the thermoseed CLI in a subprocess; returns CompletedProcess."""
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "thermoseed.cli", *[str(a) for a in args]],
        capture_output=True,
        text=True,
        env=env,
    )


def run_cli_parallel(jobs, max_workers=2, env_extra=None):
    """Run several CLI invocations concurrently (independent runs only).

    Each job is a list of CLI arguments. Workers get a single BLAS thread
    so two trainings share the cores fairly. Raises on any failure.
    """
    env = dict(os.environ)
    env.setdefault("OMP_NUM_THREADS", "1")
    env.setdefault("OPENBLAS_NUM_THREADS", "1")
    if env_extra:
        env.update(env_extra)
    pending = [list(j) for j in jobs]
    running = []
    failures = []
    while pending or running:
        while pending and len(running) < max_workers:
            args = pending.pop(0)
            proc = subprocess.Popen(
                [sys.executable, "-m", "thermoseed.cli", *[str(a) for a in args]],
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                env=env,
            )
            running.append((args, proc))
        still = []
        for args, proc in running:
            if proc.poll() is None:
                still.append((args, proc))
            else:
                out, err = proc.communicate()
                if proc.returncode != 0:
                    failures.append((args, proc.returncode, out, err))
        running = still
        if running:
            time.sleep(0.5)
    if failures:
        args, code, out, err = failures[0]
        raise RuntimeError(f"CLI job {args} exited {code}:\n{out}\n{err}")
