import os
import sys

from caremesh.cli import daemon_main

if __name__ == "__main__":
    # Fall back to daemon.json in the working directory when no flags are given
    if len(sys.argv) == 1 and os.path.exists('daemon.json'):
        sys.argv += ['--config', 'daemon.json']
    daemon_main()
