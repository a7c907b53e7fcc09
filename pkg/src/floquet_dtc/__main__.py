import sys

from floquet_dtc.cli import main

sys.exit(main())
