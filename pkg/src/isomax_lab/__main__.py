import sys

from isomax_lab.cli import main

sys.exit(main())
