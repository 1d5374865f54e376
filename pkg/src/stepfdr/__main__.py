import sys

from stepfdr.cli import main

sys.exit(main())
