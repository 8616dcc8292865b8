import sys

from kinhom.harness.cli import main

sys.exit(main())
