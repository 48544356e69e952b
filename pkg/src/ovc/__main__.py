import sys

from ovc.cli import main

sys.exit(main())
