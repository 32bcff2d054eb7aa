import sys

from hlcr.cli import main

sys.exit(main())
