#!/usr/bin/env python3
"""Generate a credential bundle (TLS CA + server cert, SSH host key,
client key, authorized_keys) for agents and clients.

Usage: make_credentials.py <output-dir>
"""

import sys

from srv6kit.creds import make_bundle


def main():
    if len(sys.argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    bundle = make_bundle(sys.argv[1])
    for name, path in vars(bundle).items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
