import sys

from hwrec.cli import main

sys.exit(main())
