#!/usr/bin/env python3

'''
memalign command line without installing the console script, e.g.
    scripts/memalign_cli.py gen-data --out /tmp/bench --scenes 50
'''

import sys

from memalign.cli import main

if __name__ == '__main__':
    sys.exit(main())
