import sys

from ranger.cli import main

sys.exit(main())
